"""Named random sub-scopes for one seeded run.

Every scope is ``Rng(master).derive(name)``, so a scope's stream depends
only on the master seed and its name. Library routines that receive the
master Rng derive the same names internally (``init`` for weights and
heads, ``shuffle`` for batch order); the harness takes the remaining
scopes from here:

* ``data``          synthetic world and samples
* ``pairing``       mixup pairing
* ``fisher-subset`` EWC Fisher subset
* ``buffer-subset`` replay buffer contents
* ``probe-init``    the untrained network of the random-lift control

Taking a scope twice in one run is an error, which guards against two
consumers silently sharing one stream.
"""

from __future__ import annotations

from ..errors import StateError
from ..numeric import Rng

SCOPES = ("init", "shuffle", "data", "pairing", "fisher-subset", "buffer-subset", "probe-init")


class RngScopes:
    def __init__(self, master_seed: int):
        self.seed = int(master_seed)
        self.master = Rng(self.seed)
        self._taken: set[str] = set()

    def take(self, name: str) -> Rng:
        if name in self._taken:
            raise StateError(f"rng scope {name!r} already used in this run")
        self._taken.add(name)
        return self.master.derive(name)

    @property
    def taken(self) -> tuple[str, ...]:
        return tuple(sorted(self._taken))


def seed_everything(master_seed: int) -> RngScopes:
    return RngScopes(master_seed)
