"""Periodic Delaunay triangulation, maintained in place by edge flips.

The triangulation lives on the flat torus. Each triangle stores, per vertex
slot, the integer image shift of the periodic copy it uses; slot 0 is always
the (0, 0) copy, so a triangle embeds as positions[v_k] + shift_k * L. All
geometric predicates run on these local embeddings in float64, regardless of
the particle precision.

Construction happens once: the (deterministically jittered) points are tiled
into a (2m+1) x (2m+1) block, a planar Delaunay triangulation of the block is
computed, and the triangles incident to the central copy are quotiented onto
the torus. After that the structure is only ever updated by flips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BrownsimError, BuildError, NonConvergenceError, PeriodicBox, min_image_disp

DEFAULT_TOL = 1e-12
_JITTER_KEY = (0x7C94_1EAF, 0x0B5E_55ED)  # fixed; build jitter must be reproducible


@dataclass(frozen=True)
class FlipDecision:
    edge: int
    reason: str  # "delaunay-violation" | "inverted-triangle"


@dataclass
class RepairResult:
    flips: int
    passes: int
    needs_rollback: bool


@dataclass
class AuditReport:
    n_vertices: int
    n_edges: int
    n_triangles: int
    euler_ok: bool
    refs_ok: bool
    min_area: float
    n_nonpositive_areas: int
    n_incircle_violations: int
    max_circumdiameter: float
    circumdiameter_ok: bool
    shifts_in_range: bool
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """Structural and Delaunay checks; embedding-regime flags are advisory."""
        return (
            self.euler_ok
            and self.refs_ok
            and self.n_nonpositive_areas == 0
            and self.n_incircle_violations == 0
        )


def incircle(a, b, c, d, tol: float = DEFAULT_TOL):
    """True where d is strictly inside the circumcircle of CCW (a, b, c).

    The classic lifted determinant, compared against tol * scale^4 so
    cocircular-within-tolerance cases report False (no flip).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ax = a[..., 0] - d[..., 0]
    ay = a[..., 1] - d[..., 1]
    bx = b[..., 0] - d[..., 0]
    by = b[..., 1] - d[..., 1]
    cx = c[..., 0] - d[..., 0]
    cy = c[..., 1] - d[..., 1]
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    det = ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx)
    scale = np.maximum.reduce([np.abs(ax), np.abs(ay), np.abs(bx), np.abs(by), np.abs(cx), np.abs(cy)])
    return det > tol * scale**4


def _cross(ux, uy, vx, vy):
    return ux * vy - uy * vx


def _point_in_triangle(p, a, b, c):
    """Closed point-in-triangle test, orientation agnostic (vectorized)."""
    s1 = _cross(b[..., 0] - a[..., 0], b[..., 1] - a[..., 1], p[..., 0] - a[..., 0], p[..., 1] - a[..., 1])
    s2 = _cross(c[..., 0] - b[..., 0], c[..., 1] - b[..., 1], p[..., 0] - b[..., 0], p[..., 1] - b[..., 1])
    s3 = _cross(a[..., 0] - c[..., 0], a[..., 1] - c[..., 1], p[..., 0] - c[..., 0], p[..., 1] - c[..., 1])
    pos = (s1 >= 0) & (s2 >= 0) & (s3 >= 0)
    neg = (s1 <= 0) & (s2 <= 0) & (s3 <= 0)
    return pos | neg


def _segments_intersect(p, q, u, v) -> bool:
    """Closed segment intersection between pq and uv (scalars, 2-vectors)."""
    d1 = _cross(q[0] - p[0], q[1] - p[1], u[0] - p[0], u[1] - p[1])
    d2 = _cross(q[0] - p[0], q[1] - p[1], v[0] - p[0], v[1] - p[1])
    d3 = _cross(v[0] - u[0], v[1] - u[1], p[0] - u[0], p[1] - u[1])
    d4 = _cross(v[0] - u[0], v[1] - u[1], q[0] - u[0], q[1] - u[1])
    if d1 == 0.0 and d2 == 0.0 and d3 == 0.0 and d4 == 0.0:
        # fully collinear: overlap only if the 1D extents touch
        for axis in (0, 1):
            if max(p[axis], q[axis]) < min(u[axis], v[axis]) or \
               max(u[axis], v[axis]) < min(p[axis], q[axis]):
                return False
        return True
    return bool(d1 * d2 <= 0.0 and d3 * d4 <= 0.0)


class PeriodicTriangulation:
    """Vertex/edge/triangle arrays with opposite-vertex links on the torus.

    edge_v[e] = (a, b): the triangle listed first in edge_tri[e] traverses the
    directed edge a -> b in counter-clockwise order (it is the "left" side).
    edge_opp[e] holds, per side, the slot of the vertex opposite the edge.
    tri_edge[t, k] is the edge opposite slot k (joining slots k+1 and k+2).
    """

    def __init__(self, box: PeriodicBox, n_vertices: int, tri_v, tri_shift, tri_edge,
                 edge_v, edge_tri, edge_opp, tol: float = DEFAULT_TOL):
        self.box = box
        self.n_vertices = int(n_vertices)
        self.tri_v = np.ascontiguousarray(tri_v, dtype=np.int32)
        self.tri_shift = np.ascontiguousarray(tri_shift, dtype=np.int8)
        self.tri_edge = np.ascontiguousarray(tri_edge, dtype=np.int32)
        self.edge_v = np.ascontiguousarray(edge_v, dtype=np.int32)
        self.edge_tri = np.ascontiguousarray(edge_tri, dtype=np.int32)
        self.edge_opp = np.ascontiguousarray(edge_opp, dtype=np.int8)
        self.tol = float(tol)

    # -- basic counts ------------------------------------------------------

    @property
    def n_triangles(self) -> int:
        return self.tri_v.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_v.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) vertex pairs; the neighbor oracle for overlap correction."""
        return self.edge_v

    # -- state snapshots (for step rollback) --------------------------------

    def save_state(self):
        return (self.tri_v.copy(), self.tri_shift.copy(), self.tri_edge.copy(),
                self.edge_v.copy(), self.edge_tri.copy(), self.edge_opp.copy())

    def restore_state(self, state):
        self.tri_v[...], self.tri_shift[...], self.tri_edge[...] = state[0], state[1], state[2]
        self.edge_v[...], self.edge_tri[...], self.edge_opp[...] = state[3], state[4], state[5]

    def apply_crossings(self, crossings: np.ndarray):
        """Account for particles that wrapped across the box this update.

        crossings[i] is the integer number of box lengths particle i jumped
        per axis (new_unwrapped = wrapped + crossings * L). Image shifts move
        with the vertex, then every triangle is re-anchored to slot 0.
        """
        if not np.any(crossings):
            return
        ts = self.tri_shift.astype(np.int64) + crossings[self.tri_v]
        ts -= ts[:, 0:1, :]
        self.tri_shift = ts.astype(np.int8)

    # -- embeddings ----------------------------------------------------------

    def tri_coords(self, positions: np.ndarray) -> np.ndarray:
        """(F, 3, 2) embedded triangle coordinates in float64."""
        pos = np.asarray(positions, dtype=np.float64)
        return pos[self.tri_v] + self.tri_shift.astype(np.float64) * self.box.length

    def signed_area2(self, positions: np.ndarray) -> np.ndarray:
        """Twice the signed area of every triangle under its local embedding."""
        xy = self.tri_coords(positions)
        e1 = xy[:, 1] - xy[:, 0]
        e2 = xy[:, 2] - xy[:, 0]
        return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]

    def edge_quads(self, positions: np.ndarray):
        """Embedded quad (A, B, C, D) per edge: endpoints, left opp, right opp.

        Everything is expressed in the left triangle's shift gauge; the right
        triangle is aligned through the shared endpoint a.
        """
        pos = np.asarray(positions, dtype=np.float64)
        L = self.box.length
        tl = self.edge_tri[:, 0]
        tr = self.edge_tri[:, 1]
        ol = self.edge_opp[:, 0].astype(np.int64)
        orr = self.edge_opp[:, 1].astype(np.int64)
        a_sl = (ol + 1) % 3
        b_sl = (ol + 2) % 3
        a_sr = (orr + 2) % 3
        sh = self.tri_shift.astype(np.float64)

        def emb(tri, slot, extra=None):
            v = self.tri_v[tri, slot]
            s = sh[tri, slot]
            if extra is not None:
                s = s + extra
            return pos[v] + s * L

        A = emb(tl, a_sl)
        B = emb(tl, b_sl)
        C = emb(tl, ol)
        delta = sh[tl, a_sl] - sh[tr, a_sr]
        D = emb(tr, orr, extra=delta)
        return A, B, C, D

    # -- predicates ----------------------------------------------------------

    def delaunay_flags(self, positions: np.ndarray, tol: float | None = None) -> np.ndarray:
        """Edges whose right opposite vertex lies inside the left circumcircle."""
        A, B, C, D = self.edge_quads(positions)
        return incircle(A, B, C, D, self.tol if tol is None else tol)

    def inverted_edge_flags(self, positions: np.ndarray) -> np.ndarray:
        """Edges flagged by the point-in-triangle inversion predicate."""
        A, B, C, D = self.edge_quads(positions)
        return _point_in_triangle(D, A, B, C) | _point_in_triangle(C, A, B, D)

    def detect_inverted_triangles(self, positions: np.ndarray) -> list[FlipDecision]:
        flags = self.inverted_edge_flags(positions)
        return [FlipDecision(int(e), "inverted-triangle") for e in np.flatnonzero(flags)]

    def edge_inversion_present(self, prev: np.ndarray, curr: np.ndarray) -> bool:
        """True when any edge's displacement vector reversed sign this step.

        That means the pair passed through each other; the step must be
        redone with a smaller dt, no flip sequence can repair it.
        """
        a = self.edge_v[:, 0]
        b = self.edge_v[:, 1]
        d0 = min_image_disp(self.box, prev[a], prev[b]).astype(np.float64)
        d1 = min_image_disp(self.box, curr[a], curr[b]).astype(np.float64)
        return bool(np.any((d0 * d1).sum(axis=1) < 0.0))

    # -- flips ---------------------------------------------------------------

    def flip_edge(self, e: int):
        """Replace edge (a, b) with the cross diagonal (c, d) of its quad.

        Pure link surgery: triangle indices are reused, the edge index is
        reused, the four boundary edges are relinked, shifts re-anchored.
        """
        tl, tr = int(self.edge_tri[e, 0]), int(self.edge_tri[e, 1])
        if tl == tr:
            raise BrownsimError(f"edge {e} is incident to one triangle twice; not flippable")
        ol, orr = int(self.edge_opp[e, 0]), int(self.edge_opp[e, 1])
        a_sl, b_sl = (ol + 1) % 3, (ol + 2) % 3
        b_sr, a_sr = (orr + 1) % 3, (orr + 2) % 3

        va, vb = int(self.tri_v[tl, a_sl]), int(self.tri_v[tl, b_sl])
        vc, vd = int(self.tri_v[tl, ol]), int(self.tri_v[tr, orr])
        sa = self.tri_shift[tl, a_sl].astype(np.int64)
        sb = self.tri_shift[tl, b_sl].astype(np.int64)
        sc = self.tri_shift[tl, ol].astype(np.int64)
        delta = sa - self.tri_shift[tr, a_sr].astype(np.int64)
        sd = self.tri_shift[tr, orr].astype(np.int64) + delta

        e_bc = int(self.tri_edge[tl, a_sl])
        e_ca = int(self.tri_edge[tl, b_sl])
        e_ad = int(self.tri_edge[tr, b_sr])
        e_db = int(self.tri_edge[tr, a_sr])
        if len({e, e_bc, e_ca, e_ad, e_db}) != 5:
            raise BrownsimError(f"edge {e}: quad boundary is glued to itself; not flippable")

        # left slot of the new diagonal goes to the triangle traversing c -> d
        self.tri_v[tl] = (vc, va, vd)
        self.tri_shift[tl] = np.stack([sc, sa, sd]) - sc
        self.tri_edge[tl] = (e_ad, e, e_ca)
        self.tri_v[tr] = (vd, vb, vc)
        self.tri_shift[tr] = np.stack([sd, sb, sc]) - sd
        self.tri_edge[tr] = (e_bc, e, e_db)

        self.edge_v[e] = (vc, vd)
        self.edge_tri[e] = (tr, tl)
        self.edge_opp[e] = (1, 1)

        self._relink(e_ca, tl, tl, 2)
        self._relink(e_ad, tr, tl, 0)
        self._relink(e_bc, tl, tr, 0)
        self._relink(e_db, tr, tr, 2)

    def _relink(self, edge: int, old_tri: int, new_tri: int, opp_slot: int):
        side = 0 if self.edge_tri[edge, 0] == old_tri else 1
        self.edge_tri[edge, side] = new_tri
        self.edge_opp[edge, side] = opp_slot

    def _select_independent(self, flagged: np.ndarray) -> list[int]:
        """Greedy conflict-free subset, ascending edge index: no two chosen
        edges may share a triangle within one pass."""
        claimed = np.zeros(self.n_triangles, dtype=bool)
        chosen = []
        for e in flagged:
            t1, t2 = self.edge_tri[e]
            if not claimed[t1] and not claimed[t2]:
                claimed[t1] = True
                claimed[t2] = True
                chosen.append(int(e))
        return chosen

    # -- maintenance loops ---------------------------------------------------

    def restore_delaunay(self, positions: np.ndarray, tol: float | None = None,
                         max_passes: int = 1000) -> int:
        """Flip until no edge violates the in-circle condition; returns passes."""
        passes = 0
        while True:
            flagged = np.flatnonzero(self.delaunay_flags(positions, tol))
            if flagged.size == 0:
                return passes
            passes += 1
            if passes > max_passes:
                raise NonConvergenceError(
                    f"delaunay restoration did not converge in {max_passes} passes; "
                    f"{flagged.size} violating edges remain"
                )
            for e in self._select_independent(flagged):
                self.flip_edge(e)

    def repair_inversions(self, positions: np.ndarray, prev: np.ndarray | None = None,
                          max_passes: int = 10) -> RepairResult:
        """Flip away inverted (non-positive area) triangles, a few passes.

        Edges are flagged by the point-in-triangle predicate; when the
        previous positions are available, an edge of an inverted triangle is
        also flagged if its opposite vertex's step path crossed it, which
        untangles multi-edge crossings the local predicate cannot see. If a
        pass makes no progress while inversions remain, the step has to be
        rolled back.
        """
        flips = 0
        for p in range(max_passes):
            inverted = np.flatnonzero(self.signed_area2(positions) <= 0.0)
            if inverted.size == 0:
                return RepairResult(flips, p, False)
            flags = self.inverted_edge_flags(positions)
            if prev is not None:
                for e in self._crossed_edges(positions, prev, inverted):
                    flags[e] = True
            chosen = self._select_independent(np.flatnonzero(flags))
            if not chosen:
                return RepairResult(flips, p, True)
            for e in chosen:
                self.flip_edge(e)
            flips += len(chosen)
        still = np.any(self.signed_area2(positions) <= 0.0)
        return RepairResult(flips, max_passes, bool(still))

    def _crossed_edges(self, positions: np.ndarray, prev: np.ndarray,
                       inverted: np.ndarray) -> list[int]:
        """Edges of inverted triangles crossed by their opposite vertex's path."""
        pos = np.asarray(positions, dtype=np.float64)
        prv = np.asarray(prev, dtype=np.float64)
        xy = self.tri_coords(positions)
        out = []
        for t in inverted:
            for k in range(3):
                w = int(self.tri_v[t, k])
                q = xy[t, k]
                step = min_image_disp(self.box, prv[w], pos[w]).astype(np.float64)
                pstart = q - step
                u = xy[t, (k + 1) % 3]
                v = xy[t, (k + 2) % 3]
                if _segments_intersect(pstart, q, u, v):
                    out.append(int(self.tri_edge[t, k]))
        return out

    # -- diagnostics -----------------------------------------------------------

    def audit(self, positions: np.ndarray, tol: float | None = None) -> AuditReport:
        """Structural and geometric health report; never raises."""
        msgs = []
        V, E, F = self.n_vertices, self.n_edges, self.n_triangles
        euler_ok = (E == 3 * V) and (F == 2 * V)
        if not euler_ok:
            msgs.append(f"euler counts off: V={V} E={E} F={F} (want E=3V, F=2V)")

        refs_ok = True
        seen = np.zeros((F, 3), dtype=bool)
        sh = self.tri_shift.astype(np.int64)
        for e in range(E):
            tl, tr = int(self.edge_tri[e, 0]), int(self.edge_tri[e, 1])
            ol, orr = int(self.edge_opp[e, 0]), int(self.edge_opp[e, 1])
            va, vb = int(self.edge_v[e, 0]), int(self.edge_v[e, 1])
            if not (0 <= tl < F and 0 <= tr < F and 0 <= ol < 3 and 0 <= orr < 3):
                refs_ok = False
                msgs.append(f"edge {e}: triangle reference out of range")
                continue
            ok = (
                tl != tr
                and self.tri_edge[tl, ol] == e
                and self.tri_edge[tr, orr] == e
                and self.tri_v[tl, (ol + 1) % 3] == va
                and self.tri_v[tl, (ol + 2) % 3] == vb
                and self.tri_v[tr, (orr + 1) % 3] == vb
                and self.tri_v[tr, (orr + 2) % 3] == va
            )
            if ok:
                d_a = sh[tl, (ol + 1) % 3] - sh[tr, (orr + 2) % 3]
                d_b = sh[tl, (ol + 2) % 3] - sh[tr, (orr + 1) % 3]
                ok = bool(np.array_equal(d_a, d_b))
                if not ok:
                    msgs.append(f"edge {e}: incompatible image shifts between its triangles")
            else:
                msgs.append(f"edge {e}: broken cross references")
            if ok:
                seen[tl, ol] = True
                seen[tr, orr] = True
            refs_ok = refs_ok and ok
        if refs_ok and not seen.all():
            refs_ok = False
            msgs.append("some triangle edge slots are not referenced by any edge")

        shifts_in_range = bool(
            np.all(self.tri_shift[:, 0, :] == 0) and np.all(np.abs(self.tri_shift) <= 1)
        )
        if not shifts_in_range:
            msgs.append("image shifts outside {-1,0,1} (embedding regime exceeded)")

        # geometric checks need in-range indices; a structurally broken state
        # is already reported above and must not crash the report
        indices_ok = bool(
            (self.edge_tri >= 0).all() and (self.edge_tri < F).all()
            and (self.edge_opp >= 0).all() and (self.edge_opp < 3).all()
            and (self.tri_edge >= 0).all() and (self.tri_edge < E).all()
            and (self.tri_v >= 0).all() and (self.tri_v < V).all()
        )
        if indices_ok:
            area2 = self.signed_area2(positions)
            n_bad_area = int(np.count_nonzero(area2 <= 0.0))
            if n_bad_area:
                msgs.append(f"{n_bad_area} triangles with non-positive area")
            n_circ = int(np.count_nonzero(self.delaunay_flags(positions, tol)))
            if n_circ:
                msgs.append(f"{n_circ} edges violate the in-circle condition")
            xy = self.tri_coords(positions)
            s0 = np.linalg.norm(xy[:, 1] - xy[:, 0], axis=1)
            s1 = np.linalg.norm(xy[:, 2] - xy[:, 1], axis=1)
            s2 = np.linalg.norm(xy[:, 0] - xy[:, 2], axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                circum = np.where(area2 > 0.0, s0 * s1 * s2 / np.where(area2 > 0.0, area2, 1.0), np.inf)
            max_circum = float(np.max(circum)) if F else 0.0
        else:
            refs_ok = False
            msgs.append("index arrays out of range; geometric checks skipped")
            n_bad_area = 0
            n_circ = 0
            max_circum = float("inf")
        circum_ok = bool(max_circum < self.box.length / 2.0)
        if indices_ok and not circum_ok:
            msgs.append(
                f"max circumdiameter {max_circum:.3g} >= L/2 = {self.box.length / 2:.3g}; "
                "local minimum-image embedding is ambiguous at this density"
            )

        return AuditReport(
            n_vertices=V, n_edges=E, n_triangles=F,
            euler_ok=euler_ok, refs_ok=refs_ok,
            min_area=float(area2.min() / 2.0) if (indices_ok and F) else 0.0,
            n_nonpositive_areas=n_bad_area,
            n_incircle_violations=n_circ,
            max_circumdiameter=max_circum,
            circumdiameter_ok=circum_ok,
            shifts_in_range=shifts_in_range,
            messages=msgs,
        )

    def canonical_edge_keys(self) -> set:
        """Edge identities (a, b, image offset) for set comparisons."""
        keys = set()
        sh = self.tri_shift.astype(np.int64)
        for e in range(self.n_edges):
            tl = int(self.edge_tri[e, 0])
            ol = int(self.edge_opp[e, 0])
            va, vb = int(self.edge_v[e, 0]), int(self.edge_v[e, 1])
            off = tuple(sh[tl, (ol + 2) % 3] - sh[tl, (ol + 1) % 3])
            fwd = (va, vb, off)
            rev = (vb, va, (-off[0], -off[1]))
            keys.add(min(fwd, rev))
        return keys

    def dump(self, path: str):
        """Debug text dump: triangles then edges."""
        with open(path, "w", encoding="utf-8") as fh:
            for t in range(self.n_triangles):
                fh.write(f"{self.tri_v[t, 0]} {self.tri_v[t, 1]} {self.tri_v[t, 2]}\n")
            for e in range(self.n_edges):
                fh.write(
                    f"{self.edge_v[e, 0]} {self.edge_v[e, 1]} "
                    f"{self.edge_tri[e, 0]} {self.edge_tri[e, 1]}\n"
                )


# ---------------------------------------------------------------------------
# construction


def build_initial(positions: np.ndarray, box: PeriodicBox, tol: float = DEFAULT_TOL) -> PeriodicTriangulation:
    """Periodic Delaunay triangulation of the given wrapped positions.

    A fixed sub-sigma jitter (identical across the periodic copies) makes the
    point set generic, so the planar triangulation of the tiled block is
    unique and quotients consistently; the final flip pass against the true
    positions removes any tolerance-level artifacts the jitter introduced.
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    if n < 3:
        raise BuildError(f"need at least 3 points to triangulate, got {n}")
    if np.unique(pos, axis=0).shape[0] != n:
        raise BuildError("coincident points cannot be triangulated")

    gen = np.random.Generator(np.random.Philox(key=np.array(_JITTER_KEY, dtype=np.uint64)))
    jitter = gen.standard_normal((n, 2)) * (1e-9 * box.length)
    # Never wrap the jittered points: a boundary point nudged below zero must
    # stay next to its true position, or every triangle using it would store
    # image shifts that are off by one full box length.
    jittered = pos + jitter

    last_messages: list[str] = ["no tiling produced a consistent quotient"]
    for margin in (1, 2, 3):
        tri = _build_from_tiling(jittered, box, n, margin, tol)
        if tri is None:
            continue
        tri.restore_delaunay(pos, tol)
        report = tri.audit(pos, tol)
        if report.euler_ok and report.refs_ok and report.n_nonpositive_areas == 0 \
                and report.n_incircle_violations == 0:
            return tri
        last_messages = report.messages
    raise BuildError(
        "could not build a valid periodic triangulation; the point set is too "
        "sparse or too degenerate for this box: " + "; ".join(last_messages)
    )


def _build_from_tiling(pos: np.ndarray, box: PeriodicBox, n: int, margin: int,
                       tol: float) -> PeriodicTriangulation | None:
    from scipy.spatial import Delaunay as _PlanarDelaunay

    L = box.length
    shifts = [(0, 0)] + [
        (sx, sy)
        for sy in range(-margin, margin + 1)
        for sx in range(-margin, margin + 1)
        if (sx, sy) != (0, 0)
    ]
    shift_arr = np.array(shifts, dtype=np.int64)
    blocks = [pos + shift_arr[c] * L for c in range(len(shifts))]
    cloud = np.concatenate(blocks, axis=0)
    planar = _PlanarDelaunay(cloud)
    simp = planar.simplices.astype(np.int64)

    # orient every planar triangle counter-clockwise
    p0 = cloud[simp[:, 0]]
    e1 = cloud[simp[:, 1]] - p0
    e2 = cloud[simp[:, 2]] - p0
    cw = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    simp[cw] = simp[cw][:, [0, 2, 1]]

    base = simp % n
    copy = simp // n
    has_fd = np.any(copy == 0, axis=1)

    chosen: dict[tuple, tuple] = {}
    for t in np.flatnonzero(has_fd):
        b = base[t]
        s = shift_arr[copy[t]]
        key = None
        for r in range(3):
            rb = tuple(int(b[(r + j) % 3]) for j in range(3))
            rs = [s[(r + j) % 3] for j in range(3)]
            rel = tuple(int(x) for k in range(1, 3) for x in (rs[k] - rs[0]))
            cand = rb + rel
            if key is None or cand < key:
                key = cand
        if key not in chosen:
            # store anchored at a fundamental-domain vertex so shifts are small
            anchor = int(np.flatnonzero(copy[t] == 0)[0])
            rb = [int(b[(anchor + j) % 3]) for j in range(3)]
            rs = np.stack([s[(anchor + j) % 3] for j in range(3)])
            chosen[key] = (rb, rs - rs[0])

    if len(chosen) != 2 * n:
        return None

    tri_v = np.empty((2 * n, 3), dtype=np.int32)
    tri_shift = np.empty((2 * n, 3, 2), dtype=np.int8)
    tri_edge = np.full((2 * n, 3), -1, dtype=np.int32)
    for t, (rb, rs) in enumerate(chosen.values()):
        tri_v[t] = rb
        if np.any(np.abs(rs) > 1):
            return None
        tri_shift[t] = rs

    edge_map: dict[tuple, list] = {}
    for t in range(2 * n):
        s = tri_shift[t].astype(np.int64)
        for k in range(3):
            u_sl, v_sl = (k + 1) % 3, (k + 2) % 3
            u, v = int(tri_v[t, u_sl]), int(tri_v[t, v_sl])
            off = tuple(s[v_sl] - s[u_sl])
            fwd = (u, v, off)
            rev = (v, u, (-off[0], -off[1]))
            if fwd <= rev:
                key, side = fwd, 0
            else:
                key, side = rev, 1
            slot = edge_map.setdefault(key, [None, None])
            if slot[side] is not None:
                return None  # inconsistent quotient, enlarge the tiling
            slot[side] = (t, k)

    if len(edge_map) != 3 * n:
        return None

    edge_v = np.empty((3 * n, 2), dtype=np.int32)
    edge_tri = np.empty((3 * n, 2), dtype=np.int32)
    edge_opp = np.empty((3 * n, 2), dtype=np.int8)
    for e, (key, sides) in enumerate(edge_map.items()):
        if sides[0] is None or sides[1] is None:
            return None
        edge_v[e] = (key[0], key[1])
        for side in (0, 1):
            t, k = sides[side]
            edge_tri[e, side] = t
            edge_opp[e, side] = k
            tri_edge[t, k] = e

    if np.any(tri_edge < 0):
        return None
    return PeriodicTriangulation(box, n, tri_v, tri_shift, tri_edge, edge_v, edge_tri, edge_opp, tol)


# ---------------------------------------------------------------------------
# functional wrappers


def detect_edge_inversion(tri: PeriodicTriangulation, prev, curr) -> bool:
    return tri.edge_inversion_present(prev, curr)


def detect_inverted_triangles(tri: PeriodicTriangulation, positions) -> list[FlipDecision]:
    return tri.detect_inverted_triangles(positions)


def flip_edge(tri: PeriodicTriangulation, e: int):
    tri.flip_edge(e)


def restore_delaunay(tri: PeriodicTriangulation, positions, **kw) -> int:
    return tri.restore_delaunay(positions, **kw)


def repair_inversions(tri: PeriodicTriangulation, positions, prev=None, **kw) -> RepairResult:
    return tri.repair_inversions(positions, prev=prev, **kw)


def audit(tri: PeriodicTriangulation, positions, tol=None) -> AuditReport:
    return tri.audit(positions, tol)
