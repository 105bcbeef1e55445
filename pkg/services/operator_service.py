"""
Operator Service Module
Elliptic operator specifications (non-divergence and divergence form), coefficient
presets, pointwise validation, the zero-order shift and the discrete operator.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Optional

import numpy as np
from scipy import sparse

from services.grid_service import SpaceTimeGrid
from utils.errors import (AsymmetryError, EllipticityError, InsufficientShiftError,
                          ShapeMismatchError, ValidationError)

CoefficientField = Callable[[np.ndarray], np.ndarray]

SYMMETRY_TOLERANCE = 1e-12


class OperatorForm(str, Enum):
    NON_DIVERGENCE = 'non_divergence'
    DIVERGENCE = 'divergence'


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """
    Elliptic operator A on the unit cube

    NonDivergence: A u = a_ij d_i d_j u + b_i d_i u + c u
    Divergence:    A u = d_i (a_ij d_j u)

    Coefficient callables take points of shape (..., d) and return
    (..., d, d) for a, (..., d) for b and (...) for c.
    """

    form: OperatorForm
    d: int
    a: CoefficientField
    b: Optional[CoefficientField] = None
    c: Optional[CoefficientField] = None
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    c_bar: Optional[float] = None
    c_max: Optional[float] = None
    validated: bool = False
    shift: float = 0.0
    name: str = 'custom'
    params: Dict = field(default_factory=dict)

    def evaluate_a(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.a(points), dtype=float)

    def evaluate_b(self, points: np.ndarray) -> np.ndarray:
        if self.b is None:
            return np.zeros(points.shape[:-1] + (self.d,))
        return np.asarray(self.b(points), dtype=float)

    def evaluate_c(self, points: np.ndarray) -> np.ndarray:
        if self.c is None:
            return np.zeros(points.shape[:-1])
        return np.broadcast_to(np.asarray(self.c(points), dtype=float), points.shape[:-1])

    def is_laplacian(self, grid: SpaceTimeGrid) -> bool:
        """True when a = identity, b = 0 and c = 0 at every grid node"""
        pts = grid.points()
        identity = np.eye(self.d)
        return bool(np.allclose(self.evaluate_a(pts), identity, rtol=0.0, atol=1e-14)
                    and np.allclose(self.evaluate_b(pts), 0.0, rtol=0.0, atol=1e-14)
                    and np.allclose(self.evaluate_c(pts), 0.0, rtol=0.0, atol=1e-14))

    def describe(self) -> Dict:
        return {
            'name': self.name,
            'form': self.form.value,
            'params': dict(self.params),
            'lambda_min': self.lambda_min,
            'lambda_max': self.lambda_max,
            'c_bar': self.c_bar,
            'shift': self.shift
        }


# ============================================================================
# COEFFICIENT PRESETS
# ============================================================================

def _scaled_identity(values: np.ndarray, d: int) -> np.ndarray:
    return values[..., None, None] * np.eye(d)


def _laplacian(d: int) -> OperatorSpec:
    return OperatorSpec(form=OperatorForm.NON_DIVERGENCE, d=d,
                        a=lambda p: _scaled_identity(np.ones(p.shape[:-1]), d),
                        name='laplacian')


def _smooth(d: int, amplitude: float = 0.5, drift: float = 0.0, c: float = 0.0) -> OperatorSpec:
    if not 0 <= amplitude < 1:
        raise ValidationError(f"smooth preset needs 0 <= amplitude < 1, got {amplitude}")
    return OperatorSpec(
        form=OperatorForm.NON_DIVERGENCE, d=d,
        a=lambda p: _scaled_identity(1.0 + amplitude * np.sin(2 * np.pi * p[..., 0]), d),
        b=(lambda p: np.full(p.shape[:-1] + (d,), float(drift))) if drift else None,
        c=(lambda p: np.full(p.shape[:-1], float(c))) if c else None,
        name='smooth', params={'amplitude': amplitude, 'drift': drift, 'c': c})


def _growth(d: int, c: float = 2.0) -> OperatorSpec:
    return OperatorSpec(form=OperatorForm.NON_DIVERGENCE, d=d,
                        a=lambda p: _scaled_identity(np.ones(p.shape[:-1]), d),
                        c=lambda p: np.full(p.shape[:-1], float(c)),
                        name='growth', params={'c': c})


def _discontinuous(d: int, jump: float = 0.5, form: str = 'divergence') -> OperatorSpec:
    def a(p):
        a11 = 1.0 + jump * np.sign(p[..., 0] - 0.5)
        out = _scaled_identity(np.ones(p.shape[:-1]), d)
        out[..., 0, 0] = a11
        return out
    return OperatorSpec(form=OperatorForm(form), d=d, a=a, name='discontinuous',
                        params={'jump': jump, 'form': form})


def _contrast(d: int, contrast: float = 10.0, interface: float = 0.5) -> OperatorSpec:
    if contrast <= 0:
        raise ValidationError(f"contrast must be positive, got {contrast}")
    return OperatorSpec(
        form=OperatorForm.DIVERGENCE, d=d,
        a=lambda p: _scaled_identity(np.where(p[..., 0] < interface, 1.0, float(contrast)), d),
        name='contrast', params={'contrast': contrast, 'interface': interface})


OPERATOR_PRESETS: Dict[str, Callable[..., OperatorSpec]] = {
    'laplacian': _laplacian,
    'smooth': _smooth,
    'growth': _growth,
    'discontinuous': _discontinuous,
    'contrast': _contrast,
}


def make_operator(preset: str, d: int, params: Optional[Dict] = None) -> OperatorSpec:
    """
    Build an operator spec from a named preset

    Args:
        preset: One of OPERATOR_PRESETS
        d: Spatial dimension
        params: Preset keyword parameters

    Returns:
        Unvalidated OperatorSpec
    """
    if preset not in OPERATOR_PRESETS:
        raise ValidationError(f"Unknown operator preset '{preset}'",
                              {'preset': preset, 'known': sorted(OPERATOR_PRESETS)})
    try:
        return OPERATOR_PRESETS[preset](d, **(params or {}))
    except TypeError as e:
        raise ValidationError(f"Invalid parameters for operator preset '{preset}': {e}",
                              {'preset': preset, 'params': params or {}})


# ============================================================================
# VALIDATION AND SHIFT
# ============================================================================

def validate(spec: OperatorSpec, grid: SpaceTimeGrid) -> OperatorSpec:
    """
    Check symmetry and uniform ellipticity at every grid node

    Args:
        spec: Operator to check
        grid: Grid whose nodes are scanned

    Returns:
        Spec annotated with measured lambda_min, lambda_max, c_bar and c_max
    """
    if spec.d != grid.d:
        raise ValidationError(f"Operator dimension {spec.d} does not match grid dimension {grid.d}")
    if spec.form is OperatorForm.DIVERGENCE and (spec.b is not None or spec.c is not None):
        raise ValidationError("Divergence-form operators carry no first- or zero-order terms",
                              {'name': spec.name})

    pts = grid.points()
    a_vals = spec.evaluate_a(pts)
    if a_vals.shape != pts.shape[:-1] + (spec.d, spec.d):
        raise ShapeMismatchError(f"Coefficient a has shape {a_vals.shape}",
                                 {'expected': list(pts.shape[:-1] + (spec.d, spec.d))})

    asym = np.abs(a_vals - np.swapaxes(a_vals, -1, -2)).max(axis=(-1, -2))
    worst = np.unravel_index(np.argmax(asym), asym.shape)
    if asym[worst] > SYMMETRY_TOLERANCE * max(1.0, float(np.abs(a_vals[worst]).max())):
        raise AsymmetryError(f"Coefficient matrix a is not symmetric at x = {pts[worst].tolist()}",
                             {'point': pts[worst].tolist(), 'defect': float(asym[worst])})

    eig = np.linalg.eigvalsh(a_vals)
    low_at = np.unravel_index(np.argmin(eig[..., 0]), eig.shape[:-1])
    high_at = np.unravel_index(np.argmax(eig[..., -1]), eig.shape[:-1])
    lam_min = float(eig[low_at][0])
    lam_max = float(eig[high_at][-1])
    if lam_min <= 0:
        raise EllipticityError(f"Operator is not elliptic at x = {pts[low_at].tolist()} "
                               f"(smallest eigenvalue {lam_min})",
                               {'point': pts[low_at].tolist(), 'eigenvalue': lam_min})
    if spec.lambda_min is not None and lam_min < spec.lambda_min * (1 - 1e-12):
        raise EllipticityError(f"Lower ellipticity bound {spec.lambda_min} violated at "
                               f"x = {pts[low_at].tolist()}",
                               {'point': pts[low_at].tolist(), 'eigenvalue': lam_min})
    if spec.lambda_max is not None and lam_max > spec.lambda_max * (1 + 1e-12):
        raise EllipticityError(f"Upper ellipticity bound {spec.lambda_max} violated at "
                               f"x = {pts[high_at].tolist()}",
                               {'point': pts[high_at].tolist(), 'eigenvalue': lam_max})

    c_max = float(spec.evaluate_c(pts).max())
    return replace(spec, lambda_min=lam_min, lambda_max=lam_max,
                   c_max=c_max, c_bar=max(0.0, c_max), validated=True)


def shift_zero_order(spec: OperatorSpec, alpha: float) -> OperatorSpec:
    """
    Replace c by c - alpha (change of unknown U = exp(-alpha t) u)

    Args:
        spec: Validated non-divergence operator
        alpha: Shift rate, at least c_bar

    Returns:
        Operator with c - alpha <= 0 everywhere and c_bar = 0
    """
    if spec.form is not OperatorForm.NON_DIVERGENCE:
        raise ValidationError("Zero-order shift applies to non-divergence operators only",
                              {'form': spec.form.value})
    if not spec.validated:
        raise ValidationError("Validate the operator before shifting it", {'name': spec.name})
    if alpha < spec.c_bar or (spec.c_max is not None and alpha < spec.c_max):
        raise InsufficientShiftError(f"Shift {alpha} is below max c = {spec.c_max}",
                                     {'alpha': alpha, 'c_max': spec.c_max})
    if alpha == 0:
        return spec

    base = spec.c
    shifted = (lambda p: np.asarray(base(p), dtype=float) - alpha) if base is not None \
        else (lambda p: np.full(p.shape[:-1], -float(alpha)))
    return replace(spec, c=shifted, c_max=spec.c_max - alpha, c_bar=0.0,
                   shift=spec.shift + alpha, name=f"{spec.name}-shifted")


# ============================================================================
# DISCRETE OPERATOR
# ============================================================================

class DiscreteOperator:
    """Second-order finite-difference matrix of A on the interior nodes (zero Dirichlet data)"""

    def __init__(self, spec: OperatorSpec, grid: SpaceTimeGrid):
        if spec.d != grid.d:
            raise ValidationError(f"Operator dimension {spec.d} does not match grid dimension {grid.d}")
        self.spec = spec
        self.grid = grid
        self.matrix = self._assemble()

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def _assemble(self) -> sparse.csr_matrix:
        grid, spec = self.grid, self.spec
        d, h = grid.d, grid.h
        shape = grid.spatial_shape
        n_full = int(np.prod(shape))
        full = np.arange(n_full).reshape(shape)
        rows_full = full[grid.interior_slice()].ravel()
        multi = np.stack(np.unravel_index(rows_full, shape), axis=1)
        interior_map = np.full(n_full, -1, dtype=np.int64)
        interior_map[rows_full] = np.arange(rows_full.size)

        all_points = grid.points().reshape(-1, d)
        points = all_points[rows_full]
        unit = np.eye(d, dtype=np.int64)

        def neighbor(offset: np.ndarray) -> np.ndarray:
            return np.ravel_multi_index(tuple((multi + offset).T), shape)

        rows, cols, vals = [], [], []

        def add(columns: np.ndarray, values: np.ndarray) -> None:
            rows.append(np.arange(rows_full.size))
            cols.append(columns)
            vals.append(np.broadcast_to(values, columns.shape))

        center = rows_full
        if spec.form is OperatorForm.NON_DIVERGENCE:
            a = spec.evaluate_a(points)
            b = spec.evaluate_b(points)
            for i in range(d):
                add(neighbor(unit[i]), a[:, i, i] / h ** 2 + b[:, i] / (2 * h))
                add(neighbor(-unit[i]), a[:, i, i] / h ** 2 - b[:, i] / (2 * h))
                add(center, -2.0 * a[:, i, i] / h ** 2)
                for j in range(i + 1, d):
                    mixed = 2.0 * a[:, i, j] / (4 * h ** 2)
                    for si in (1, -1):
                        for sj in (1, -1):
                            add(neighbor(si * unit[i] + sj * unit[j]), si * sj * mixed)
            add(center, spec.evaluate_c(points))
        else:
            a_full = spec.evaluate_a(all_points)
            a_here = a_full[rows_full]
            for i in range(d):
                for s in (1, -1):
                    nb = neighbor(s * unit[i])
                    face = 0.5 * (a_here[:, i, i] + a_full[nb, i, i])
                    add(nb, face / h ** 2)
                    add(center, -face / h ** 2)
                for j in range(d):
                    if j == i:
                        continue
                    for si in (1, -1):
                        a_ij = a_full[neighbor(si * unit[i]), i, j]
                        for sj in (1, -1):
                            add(neighbor(si * unit[i] + sj * unit[j]), si * sj * a_ij / (4 * h ** 2))

        rows = np.concatenate(rows)
        cols = interior_map[np.concatenate(cols)]
        vals = np.concatenate([np.asarray(v, dtype=float) for v in vals])
        keep = cols >= 0
        return sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                                 shape=(rows_full.size, rows_full.size)).tocsr()

    # ------------------------------------------------------------------
    # full-node <-> interior-vector conversions
    # ------------------------------------------------------------------

    def to_interior(self, field: np.ndarray) -> np.ndarray:
        """(..., *spatial_shape) -> (..., n_interior)"""
        d = self.grid.d
        if tuple(field.shape[-d:]) != self.grid.spatial_shape:
            raise ShapeMismatchError(f"Field shape {field.shape} does not end with {self.grid.spatial_shape}",
                                     {'shape': list(field.shape), 'expected': list(self.grid.spatial_shape)})
        inner = (Ellipsis,) + self.grid.interior_slice()
        lead = field.shape[:-d]
        return np.asarray(field[inner], dtype=float).reshape(lead + (self.size,))

    def to_full(self, vector: np.ndarray) -> np.ndarray:
        """(..., n_interior) -> (..., *spatial_shape) with zero boundary"""
        lead = vector.shape[:-1]
        out = np.zeros(lead + self.grid.spatial_shape)
        out[(Ellipsis,) + self.grid.interior_slice()] = vector.reshape(lead + self.grid.interior_shape)
        return out

    def apply(self, field: np.ndarray) -> np.ndarray:
        """Apply the discrete operator to one field or a batch of fields"""
        interior = self.to_interior(np.asarray(field, dtype=float))
        lead = interior.shape[:-1]
        flat = interior.reshape(-1, self.size)
        result = (self.matrix @ flat.T).T
        return self.to_full(result.reshape(lead + (self.size,)))


def apply(spec: OperatorSpec, grid: SpaceTimeGrid, field: np.ndarray) -> np.ndarray:
    """
    Discrete application of A with zero Dirichlet data

    Args:
        spec: Operator spec
        grid: Grid defining the spacing
        field: Spatial field with zero boundary values (batch dims allowed in front)

    Returns:
        A applied to the field, zero on the boundary
    """
    return DiscreteOperator(spec, grid).apply(field)
