"""Synthetic parametric head family with an analytic signed-distance oracle.

A head is a smooth-min union of ellipsoid parts (cranium, facial features,
ears, neck). Expressions are modeled as an analytic backward displacement
field: a point x in the posed (observed) space maps to x + D(x) in the
neutral (canonical) space, so the posed field is sdf_neutral(x + D(x)).
Exact fields, normals and part centers make oracle-grade tests possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .geometry import PointCloud, TriMesh, empty_mesh

# Fixed part list; left/right pairs share the "_l"/"_r" suffix convention.
PART_NAMES: List[str] = [
    "cranium", "forehead", "eye_l", "eye_r", "nose", "cheek_l", "cheek_r",
    "mouth", "chin", "ear_l", "ear_r", "neck", "occiput",
]

# Template layout: center, radii, blend softness. Head fits in the unit ball.
_TEMPLATE = {
    "cranium":  ((0.00,  0.15,  0.00), (0.50, 0.54, 0.50), 0.10),
    "forehead": ((0.00,  0.32,  0.30), (0.30, 0.18, 0.16), 0.08),
    "eye_l":    ((0.18,  0.12,  0.44), (0.09, 0.07, 0.07), 0.05),
    "eye_r":    ((-0.18, 0.12,  0.44), (0.09, 0.07, 0.07), 0.05),
    "nose":     ((0.00,  0.00,  0.52), (0.08, 0.13, 0.11), 0.05),
    "cheek_l":  ((0.22, -0.05,  0.34), (0.12, 0.12, 0.11), 0.08),
    "cheek_r":  ((-0.22, -0.05, 0.34), (0.12, 0.12, 0.11), 0.08),
    "mouth":    ((0.00, -0.18,  0.42), (0.12, 0.07, 0.09), 0.05),
    "chin":     ((0.00, -0.32,  0.30), (0.12, 0.11, 0.11), 0.06),
    "ear_l":    ((0.48,  0.05, -0.02), (0.06, 0.12, 0.10), 0.04),
    "ear_r":    ((-0.48, 0.05, -0.02), (0.06, 0.12, 0.10), 0.04),
    "neck":     ((0.00, -0.52, -0.05), (0.18, 0.30, 0.18), 0.12),
    "occiput":  ((0.00,  0.10, -0.30), (0.32, 0.34, 0.30), 0.10),
}

# Identity sampling ranges (uniform). Shape variation mixes global factors
# shared by every part (overall size, per-axis aspect) with per-part jitter,
# mirroring how real head variation couples all features; the right side
# deviates from the mirrored left by a bounded perturbation.
OVERALL_SCALE_RANGE = (0.90, 1.10)
ASPECT_RANGE = (0.88, 1.12)          # per-axis global stretch
CENTER_JITTER = 0.03
RADII_SCALE_RANGE = (0.90, 1.10)     # per-part local jitter
ASYMMETRY_MAX = 0.10   # right parts deviate from mirrored left by at most 10% of radii

# Expression control ranges used by random expression sampling.
JAW_OPEN_RANGE = (0.0, 0.35)       # radians about the ear-to-ear hinge
MOUTH_WIDTH_RANGE = (-0.06, 0.10)  # lateral stretch amplitude
BROW_RAISE_RANGE = (-0.04, 0.08)   # vertical brow displacement

_JAW_PIVOT_YZ = (-0.02, 0.02)      # hinge through (., y, z), axis along x
_JAW_FALLOFF = 0.22
_MOUTH_BUMP_CENTER = (0.0, -0.20, 0.42)
_MOUTH_BUMP_SIGMA = 0.16
_BROW_BUMP_CENTER = (0.0, 0.28, 0.40)
_BROW_BUMP_SIGMA = 0.18


@dataclass
class PartSpec:
    center: np.ndarray    # (3,)
    radii: np.ndarray     # (3,) all > 0
    blend_k: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(3)
        if np.any(self.radii <= 0):
            raise ValueError("part radii must be positive")
        if np.any(np.abs(self.center) > 1.0):
            raise ValueError("part centers must lie in [-1,1]^3")


@dataclass
class ExpressionControls:
    jaw_open: float = 0.0
    mouth_width: float = 0.0
    brow_raise: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.jaw_open, self.mouth_width, self.brow_raise])

    @property
    def is_neutral(self) -> bool:
        return self.jaw_open == 0.0 and self.mouth_width == 0.0 and self.brow_raise == 0.0


@dataclass
class SyntheticHeadParams:
    identity_seed: int
    parts: Dict[str, PartSpec]
    expression_controls: ExpressionControls = field(default_factory=ExpressionControls)

    def part_centers(self) -> np.ndarray:
        """(13, 3) centers in PART_NAMES order (neutral / canonical space)."""
        return np.stack([self.parts[n].center for n in PART_NAMES])

    def to_json(self) -> str:
        payload = {
            "identity_seed": self.identity_seed,
            "parts": {
                n: {"center": p.center.tolist(), "radii": p.radii.tolist(), "blend_k": p.blend_k}
                for n, p in self.parts.items()
            },
            "expression_controls": asdict(self.expression_controls),
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "SyntheticHeadParams":
        d = json.loads(text)
        parts = {
            n: PartSpec(np.array(v["center"]), np.array(v["radii"]), float(v["blend_k"]))
            for n, v in d["parts"].items()
        }
        return SyntheticHeadParams(
            identity_seed=int(d["identity_seed"]),
            parts=parts,
            expression_controls=ExpressionControls(**d["expression_controls"]),
        )


def make_synthetic_identity(seed: int) -> SyntheticHeadParams:
    """Deterministically draw a neutral head identity from the template ranges.

    Left/right pairs are mirror-symmetric up to a bounded (<=10% of radii)
    asymmetry perturbation on the right side.
    """
    rng = np.random.default_rng(seed)
    parts: Dict[str, PartSpec] = {}
    for name in PART_NAMES:
        if name.endswith("_r"):
            continue
        c0, r0, k = _TEMPLATE[name]
        c0, r0 = np.array(c0), np.array(r0)
        center = c0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER, 3)
        if not name.endswith("_l"):
            center[0] = 0.0  # midline parts stay on the symmetry plane
        radii = r0 * rng.uniform(*RADII_SCALE_RANGE, 3)
        parts[name] = PartSpec(center, radii, k)
    for name in PART_NAMES:
        if not name.endswith("_r"):
            continue
        left = parts[name[:-2] + "_l"]
        center = left.center * np.array([-1.0, 1.0, 1.0])
        wobble = rng.uniform(-ASYMMETRY_MAX, ASYMMETRY_MAX, 3)
        radii = left.radii * (1.0 + wobble)
        center = center + left.radii * rng.uniform(-ASYMMETRY_MAX, ASYMMETRY_MAX, 3) * 0.5
        parts[name] = PartSpec(np.clip(center, -1.0, 1.0), radii, left.blend_k)
    return SyntheticHeadParams(identity_seed=seed, parts=parts)


def make_expression_controls(seed: int) -> ExpressionControls:
    """Seeded random expression; seed 0 is reserved for neutral."""
    if seed == 0:
        return ExpressionControls()
    rng = np.random.default_rng(10_000 + seed)
    return ExpressionControls(
        jaw_open=float(rng.uniform(*JAW_OPEN_RANGE)),
        mouth_width=float(rng.uniform(*MOUTH_WIDTH_RANGE)),
        brow_raise=float(rng.uniform(*BROW_RAISE_RANGE)),
    )


def with_expression(params: SyntheticHeadParams, controls: ExpressionControls) -> SyntheticHeadParams:
    return SyntheticHeadParams(params.identity_seed, dict(params.parts), controls)


# ---------------------------------------------------------------------------
# Analytic fields
# ---------------------------------------------------------------------------

def _ellipsoid_solve(p: np.ndarray, radii: np.ndarray):
    """Signed distance and unit gradient of an origin-centered ellipsoid.

    Solves the KKT condition for the nearest boundary point by bisecting
    F(t) = sum_i (r_i q_i)^2 / (r_i^2 + t)^2 - 1, monotone for t > -min(r)^2,
    then polishing with Newton. Exact distances keep the composed head field
    an honest Eikonal oracle even in the far field.
    """
    r = np.asarray(radii, dtype=np.float64)
    if r.max() - r.min() < 1e-15:   # sphere: closed form
        n = np.linalg.norm(p, axis=-1)
        g = p / np.maximum(n, 1e-30)[:, None]
        return n - r[0], g
    inside = ((p / r) ** 2).sum(axis=-1) < 1.0
    sign_oct = np.where(p < 0, -1.0, 1.0)
    q = np.maximum(np.abs(p), 1e-9)          # fold into the positive octant
    v2 = (r * q) ** 2
    r2 = r * r
    lo = np.full(q.shape[0], -(r2.min()) * (1.0 - 1e-12))
    hi = np.sqrt(v2.sum(axis=-1)) + r2.max() + 1.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        f = (v2 / (r2 + mid[:, None]) ** 2).sum(axis=-1) - 1.0
        take_lo = f > 0.0
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
    t = 0.5 * (lo + hi)
    for _ in range(4):                        # Newton polish inside the bracket
        denom = r2 + t[:, None]
        f = (v2 / denom ** 2).sum(axis=-1) - 1.0
        fp = -2.0 * (v2 / denom ** 3).sum(axis=-1)
        t = np.clip(t - f / np.minimum(fp, -1e-300), lo, hi)
    nearest = r2 * q / (r2 + t[:, None])
    delta = q - nearest
    dist = np.linalg.norm(delta, axis=-1)
    sgn = np.where(inside, -1.0, 1.0)
    g = sgn[:, None] * sign_oct * delta / np.maximum(dist, 1e-30)[:, None]
    return sgn * dist, g


def ellipsoid_distance(x: np.ndarray, center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Exact signed distance to an axis-aligned ellipsoid at `center`."""
    p = np.atleast_2d(x) - center
    d, _ = _ellipsoid_solve(p, radii)
    return d if np.ndim(x) > 1 else float(d[0])


def smooth_min(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    """Polynomial C1 smooth minimum; equals min(a,b) outside the |a-b|<k band."""
    if k <= 0:
        return np.minimum(a, b)
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1.0 - h) + a * h - k * h * (1.0 - h)


def _smoothstep01(u: np.ndarray) -> np.ndarray:
    """C1 ramp: 0 for u<=0, 1 for u>=1, 3u^2-2u^3 between."""
    t = np.clip(u, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def backward_warp_points(x: np.ndarray, controls: ExpressionControls) -> np.ndarray:
    """Analytic posed->canonical map x + D(x) for the synthetic expressions.

    Jaw: rotate the lower-front region back up about the ear-to-ear hinge;
    mouth width and brow raise are Gaussian-bump displacements. All terms are
    smooth, so the composed posed field stays C1.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = pts.copy()

    if controls.jaw_open != 0.0:
        yh, zh = _JAW_PIVOT_YZ
        y, z = pts[:, 1] - yh, pts[:, 2] - zh
        # Lower-front blend weight, saturating smoothly away from the hinge.
        w = _smoothstep01(z / _JAW_FALLOFF) * _smoothstep01(-y / _JAW_FALLOFF)
        ang = controls.jaw_open * w     # rotate back up (posed jaw hangs down)
        ca, sa = np.cos(ang), np.sin(ang)
        out[:, 1] = yh + ca * y - sa * z
        out[:, 2] = zh + sa * y + ca * z

    if controls.mouth_width != 0.0:
        d2 = ((pts - np.array(_MOUTH_BUMP_CENTER)) ** 2).sum(axis=1)
        bump = np.exp(-d2 / (2.0 * _MOUTH_BUMP_SIGMA ** 2))
        out[:, 0] -= controls.mouth_width * bump * np.tanh(pts[:, 0] / 0.08)

    if controls.brow_raise != 0.0:
        d2 = ((pts - np.array(_BROW_BUMP_CENTER)) ** 2).sum(axis=1)
        bump = np.exp(-d2 / (2.0 * _BROW_BUMP_SIGMA ** 2))
        out[:, 1] -= controls.brow_raise * bump

    return out if np.ndim(x) > 1 else out[0]


def _neutral_sdf_and_gradient(params: SyntheticHeadParams, pts: np.ndarray):
    """Fold exact part distances with the smooth minimum; analytic gradient.

    Inside the |a-b| < k blend band the polynomial smooth minimum has
    d(smin)/da = h and d(smin)/db = 1-h, so the gradient folds as a convex
    combination. Parts that provably cannot influence a point (cheap
    bounding-sphere test) are skipped.
    """
    n = pts.shape[0]
    centers = np.stack([params.parts[nm].center for nm in PART_NAMES])
    rmins = np.array([params.parts[nm].radii.min() for nm in PART_NAMES])
    rmaxs = np.array([params.parts[nm].radii.max() for nm in PART_NAMES])
    ks = np.array([params.parts[nm].blend_k for nm in PART_NAMES])
    cdist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    lower = cdist - rmaxs                 # lower bound on each part distance
    best_upper = (cdist - rmins).min(axis=1)
    margin = 4.0 * ks.max()

    d = None
    g = None
    for j, name in enumerate(PART_NAMES):
        part = params.parts[name]
        k = part.blend_k
        if d is None:
            d, g = _ellipsoid_solve(pts - part.center, part.radii)
            continue
        active = lower[:, j] <= best_upper + margin
        if not active.any():
            continue
        dp = d + 2.0 * k + 1.0            # inert filler: smin reduces to d
        gp = np.zeros_like(pts)
        dj, gj = _ellipsoid_solve(pts[active] - part.center, part.radii)
        dp[active] = dj
        gp[active] = gj
        if k > 0:
            h = np.clip(0.5 + 0.5 * (dp - d) / k, 0.0, 1.0)
        else:
            h = (dp > d).astype(np.float64)
        d = dp * (1.0 - h) + d * h - k * h * (1.0 - h)
        g = g * h[:, None] + gp * (1.0 - h)[:, None]
    return d, g


def _warp_jacobian(pts: np.ndarray, controls: ExpressionControls, h: float = 1e-5) -> np.ndarray:
    """(N,3,3) central-difference Jacobian of the backward warp (cheap field)."""
    jac = np.empty((pts.shape[0], 3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        jac[:, :, a] = (backward_warp_points(pts + e, controls)
                        - backward_warp_points(pts - e, controls)) / (2.0 * h)
    return jac


def oracle_sdf_and_gradient(params: SyntheticHeadParams, x: np.ndarray):
    """Value and analytic gradient of the posed oracle field in one pass."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if params.expression_controls.is_neutral:
        return _neutral_sdf_and_gradient(params, pts)
    warped = backward_warp_points(pts, params.expression_controls)
    d, g_can = _neutral_sdf_and_gradient(params, warped)
    jac = _warp_jacobian(pts, params.expression_controls)
    g = np.einsum("nij,ni->nj", jac, g_can)
    return d, g


def oracle_sdf(params: SyntheticHeadParams, x: np.ndarray) -> np.ndarray:
    """Ground-truth signed distance of the (possibly posed) synthetic head.

    Negative inside. The expression warp is applied as the analytic backward
    displacement, then parts are folded with a per-part smooth minimum.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not params.expression_controls.is_neutral:
        pts = backward_warp_points(pts, params.expression_controls)
    d, _ = _neutral_sdf_and_gradient(params, pts)
    return d if np.ndim(x) > 1 else float(d[0])


def oracle_gradient(params: SyntheticHeadParams, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of oracle_sdf."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.empty_like(pts)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        g[:, axis] = (oracle_sdf(params, pts + e) - oracle_sdf(params, pts - e)) / (2.0 * h)
    return g if np.ndim(x) > 1 else g[0]


def oracle_normals(params: SyntheticHeadParams, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.atleast_2d(oracle_gradient(params, x, h))
    g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-30)
    return g if np.ndim(x) > 1 else g[0]


class SurfaceSamplingError(RuntimeError):
    """Raised when too many projection candidates fail to converge."""


def sample_surface(params: SyntheticHeadParams, n: int, seed: int = 0,
                   max_newton: int = 50, tol: float = 1e-4) -> PointCloud:
    """Sample n points on the oracle zero set with central-difference normals.

    Candidates are sphere-traced inward from random directions on a radius-1.3
    shell, then Newton-projected along the field gradient. Fails if more than
    1% of candidates do not converge within max_newton steps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    collected: List[np.ndarray] = []
    total_candidates = 0
    total_failures = 0
    while sum(len(c) for c in collected) < n:
        m = max(256, int((n - sum(len(c) for c in collected)) * 1.3))
        dirs = rng.normal(size=(m, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        # aim at a jittered interior target so coverage includes concavities
        target = rng.uniform(-0.15, 0.15, size=(m, 3))
        origin = target + 1.3 * dirs
        step_dir = -dirs
        pts = origin.copy()
        # sphere trace: safe because the oracle is (approximately) a distance
        for _ in range(40):
            d = oracle_sdf(params, pts)
            pts = pts + step_dir * np.maximum(d, 0.0)[:, None] * 0.9
            if np.all(np.abs(d) < 0.05):
                break
        converged = np.zeros(m, dtype=bool)
        for _ in range(max_newton):
            d, g = oracle_sdf_and_gradient(params, pts)
            converged = np.abs(d) < tol
            if converged.all():
                break
            gn2 = np.maximum((g * g).sum(axis=1), 1e-12)
            pts = pts - (d / gn2)[:, None] * g
        total_candidates += m
        total_failures += int((~converged).sum())
        good = pts[converged]
        collected.append(good)
        if total_candidates >= 4 * max(n, 256) and total_failures > 0.01 * total_candidates:
            raise SurfaceSamplingError(
                f"{total_failures}/{total_candidates} projection candidates failed to converge"
            )
    pts = np.concatenate(collected)[:n]
    normals = oracle_normals(params, pts)
    cloud = PointCloud(pts, normals)
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# Mesh extraction
# ---------------------------------------------------------------------------

def marching_cubes(field: Callable[[np.ndarray], np.ndarray], resolution: int,
                   bounds: Sequence[float] = (-1.2, 1.2)) -> TriMesh:
    """Extract the zero level set of a scalar field on a regular grid.

    Faces are wound so that geometric normals align with the field gradient
    (outward for a signed distance field). Returns an empty mesh if the field
    has no sign change on the grid.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    from skimage import measure

    lo, hi = float(bounds[0]), float(bounds[1])
    axis = np.linspace(lo, hi, resolution)
    spacing = axis[1] - axis[0]
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    vol = np.empty(pts.shape[0], dtype=np.float64)
    chunk = 262_144
    for i in range(0, len(pts), chunk):
        vol[i:i + chunk] = field(pts[i:i + chunk])
    if not np.isfinite(vol).all():
        raise ValueError("field is not finite on the grid")
    vol = vol.reshape(resolution, resolution, resolution)
    if vol.min() > 0.0 or vol.max() < 0.0:
        return empty_mesh()
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, spacing=(spacing,) * 3)
    verts = verts + lo
    mesh = TriMesh(verts, faces.astype(np.int64))
    mesh = _orient_outward(mesh, field, spacing)
    mesh = _drop_degenerate_faces(mesh)
    return mesh


def _orient_outward(mesh: TriMesh, field, h: float) -> TriMesh:
    if mesh.is_empty:
        return mesh
    idx = np.linspace(0, len(mesh.faces) - 1, min(128, len(mesh.faces))).astype(int)
    centroids = mesh.vertices[mesh.faces[idx]].mean(axis=1)
    grad = np.empty_like(centroids)
    for a in range(3):
        e = np.zeros(3)
        e[a] = 0.5 * h
        grad[:, a] = field(centroids + e) - field(centroids - e)
    dots = (mesh.face_normals()[idx] * grad).sum(axis=1)
    if np.median(dots) < 0:
        mesh.faces = mesh.faces[:, [0, 2, 1]]
    return mesh


def _drop_degenerate_faces(mesh: TriMesh, area_tol: float = 1e-12) -> TriMesh:
    if mesh.is_empty:
        return mesh
    keep = mesh.face_areas() > area_tol
    mesh.faces = mesh.faces[keep]
    return mesh


def head_mesh(params: SyntheticHeadParams, resolution: int = 128,
              bounds: Sequence[float] = (-1.2, 1.2)) -> TriMesh:
    return marching_cubes(lambda p: oracle_sdf(params, p), resolution, bounds)


def validate_head(params: SyntheticHeadParams, resolution: int = 64) -> None:
    """Assert the neutral surface is a single closed component.

    Every edge of the extracted mesh must be shared by exactly two faces and
    the face adjacency graph must be connected.
    """
    neutral = with_expression(params, ExpressionControls())
    mesh = head_mesh(neutral, resolution)
    if mesh.is_empty:
        raise ValueError("neutral head has no surface in the grid")
    edges = np.sort(mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    if not np.all(counts == 2):
        raise ValueError("neutral head surface is not closed")
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    v, f = len(mesh.vertices), mesh.faces
    adj = sp.coo_matrix(
        (np.ones(3 * len(f)), (f[:, [0, 1, 2]].ravel(), f[:, [1, 2, 0]].ravel())),
        shape=(v, v),
    )
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise ValueError(f"neutral head surface has {n_comp} components")
