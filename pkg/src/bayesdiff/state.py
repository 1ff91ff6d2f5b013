"""Array-backed chain state of the Sticky PDP sampler."""
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError
from .model import PsiPool, weights_from_sticks


@dataclass
class ChainState:
    """Latent variables of one chain.

    Tables live in fixed slots of capacity ``p + 1``; ``active[:nact[0]]``
    lists occupied slots and ``pos[k]`` is slot ``k``'s index in that list
    (-1 when free).  ``tab_atom[k]`` holds ``T`` pool indices into ``zeta``.
    ``V`` are the stick fractions of the truncated nested DP ``G``.
    """

    g: np.ndarray
    s: np.ndarray
    tab: np.ndarray
    tab_pdp: np.ndarray
    tab_n: np.ndarray
    tab_atom: np.ndarray
    active: np.ndarray
    pos: np.ndarray
    nact: np.ndarray
    pdp_n: np.ndarray
    pdp_K: np.ndarray
    zeta: np.ndarray
    V: np.ndarray
    eps: np.ndarray

    @classmethod
    def empty(cls, p, T, n, H):
        cap = p + 1
        return cls(
            g=np.ones(p, dtype=np.int64),
            s=np.ones(p, dtype=np.int64),
            tab=np.full(p, -1, dtype=np.int64),
            tab_pdp=np.zeros(cap, dtype=np.int64),
            tab_n=np.zeros(cap, dtype=np.int64),
            tab_atom=np.zeros((cap, T), dtype=np.int64),
            active=np.zeros(cap, dtype=np.int64),
            pos=np.full(cap, -1, dtype=np.int64),
            nact=np.zeros(1, dtype=np.int64),
            pdp_n=np.zeros(4, dtype=np.int64),
            pdp_K=np.zeros(4, dtype=np.int64),
            zeta=np.zeros(H),
            V=np.full(H, 0.5),
            eps=np.zeros(n),
        )

    @classmethod
    def from_labels(cls, g, s, tables, atoms, zeta, V, eps=None, n=0):
        """Build a state from per-probe labels.

        ``tables[j]`` is any hashable table key local to PDP (g_j, s_j);
        ``atoms`` maps ``(g, s, key)`` to a length-T sequence of pool indices.
        """
        g = np.asarray(g, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        p = g.size
        T = len(next(iter(atoms.values())))
        st = cls.empty(p, T, n if eps is None else len(eps), len(zeta))
        st.zeta = np.asarray(zeta, dtype=float).copy()
        st.V = np.asarray(V, dtype=float).copy()
        if eps is not None:
            st.eps = np.asarray(eps, dtype=float).copy()
        slot = {}
        for j in range(p):
            key = (int(g[j]), int(s[j]), tables[j])
            if key not in slot:
                k = len(slot)
                slot[key] = k
                st.active[k] = k
                st.pos[k] = k
                pdp = 2 * (key[0] - 1) + (key[1] - 1)
                st.tab_pdp[k] = pdp
                st.tab_atom[k] = np.asarray(atoms[key], dtype=np.int64)
                st.pdp_K[pdp] += 1
            k = slot[key]
            st.tab[j] = k
            st.tab_n[k] += 1
            st.pdp_n[st.tab_pdp[k]] += 1
        st.nact[0] = len(slot)
        st.g[:] = g
        st.s[:] = s
        return st

    # ------------------------------------------------------------------ views

    @property
    def p(self):
        return self.g.size

    @property
    def H(self):
        return self.zeta.size

    @property
    def weights(self):
        return weights_from_sticks(self.V)

    @property
    def pool(self):
        return PsiPool(self.zeta.copy(), self.weights)

    def active_tables(self):
        return self.active[: self.nact[0]]

    def xi(self, b):
        return np.asarray(b) + self.eps

    def theta(self):
        """T x p matrix of probe effects."""
        return self.zeta[self.tab_atom[self.tab]].T

    def allocation(self):
        """Cluster labels 1..q by order of first appearance along the probes."""
        _, first, inv = np.unique(self.tab, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return rank[inv] + 1

    @property
    def q(self):
        return int(self.nact[0])

    def q_by_state(self):
        pdps = self.tab_pdp[self.active_tables()]
        q2 = int(np.count_nonzero(pdps % 2 == 1))
        return self.q - q2, q2

    def atoms(self):
        """Map (g, s, slot) -> T-vector of atom values for occupied tables."""
        out = {}
        for k in self.active_tables():
            pdp = int(self.tab_pdp[k])
            out[(pdp // 2 + 1, pdp % 2 + 1, int(k))] = self.zeta[self.tab_atom[k]]
        return out

    def copy(self):
        return ChainState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    # ------------------------------------------------------------- invariants

    def check(self):
        """Raise InvariantError if any structural invariant fails."""
        p = self.p
        acts = self.active_tables()
        if len(set(acts.tolist())) != acts.size:
            raise InvariantError("duplicate active table slots")
        if not np.all(self.pos[acts] == np.arange(acts.size)):
            raise InvariantError("active list and slot positions disagree")
        if np.count_nonzero(self.pos >= 0) != acts.size:
            raise InvariantError("free slots marked as active")
        if np.any(self.tab < 0) or not np.all(self.pos[self.tab] >= 0):
            raise InvariantError("probe assigned to a free table")
        counts = np.bincount(self.tab, minlength=self.tab_n.size)
        if not np.array_equal(counts[acts], self.tab_n[acts]) or np.any(self.tab_n[acts] < 1):
            raise InvariantError("table counts out of sync")
        pdp_probe = 2 * (self.g - 1) + (self.s - 1)
        if not np.array_equal(pdp_probe, self.tab_pdp[self.tab]):
            raise InvariantError("probe labels disagree with their table's PDP")
        if not np.array_equal(np.bincount(pdp_probe, minlength=4), self.pdp_n):
            raise InvariantError("PDP customer counts out of sync")
        if not np.array_equal(np.bincount(self.tab_pdp[acts], minlength=4), self.pdp_K):
            raise InvariantError("PDP table counts out of sync")
        atoms = self.tab_atom[acts]
        if np.any(atoms < 0) or np.any(atoms >= self.H):
            raise InvariantError("atom index outside the pool")
        vals = self.zeta[atoms]
        equal = np.all(vals == vals[:, :1], axis=1)
        state2 = self.tab_pdp[acts] % 2 == 1
        if np.any(equal == state2):
            raise InvariantError("atom values inconsistent with table state")
        if self.g.size != p or np.any((self.g < 1) | (self.g > 2)) or np.any((self.s < 1) | (self.s > 2)):
            raise InvariantError("labels outside {1, 2}")
        return True
