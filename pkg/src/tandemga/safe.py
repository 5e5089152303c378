"""SAFE controller: linearization of the plant and a continuous-time LQR law."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from . import _kernels as kern
from .plant import PlantParams


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray

    def controllability_rank(self) -> int:
        n = self.A.shape[0]
        blocks = [self.B]
        for _ in range(n - 1):
            blocks.append(self.A @ blocks[-1])
        return int(np.linalg.matrix_rank(np.hstack(blocks)))


@dataclass(frozen=True)
class SafeGain:
    K: np.ndarray

    def closed_loop_eigenvalues(self, model: LinearModel) -> np.ndarray:
        return np.linalg.eigvals(model.A - model.B @ self.K.reshape(1, -1))


def linearize(params: PlantParams) -> LinearModel:
    """Jacobian of the nonlinear model at the upright origin, input = volts from neutral."""
    mt = params.M + params.m
    a = 0.5 * params.m * params.l
    j = params.m * params.l ** 2 / 3.0
    det = mt * j - a * a
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -j * params.Cf / det, -a * a * params.g / det, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, a * params.Cf / det, mt * a * params.g / det, 0.0],
    ])
    B = np.array([[0.0], [j * params.Cv / det], [0.0], [-a * params.Cv / det]])
    return LinearModel(A, B)


def care_residual(A, B, Q, R, P) -> np.ndarray:
    Rinv = np.linalg.inv(np.atleast_2d(R))
    return A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Q


def _lyap(Ac, C):
    # Solve Ac^T X + X Ac = -C through the Kronecker form; n is tiny here.
    n = Ac.shape[0]
    eye = np.eye(n)
    L = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
    X = np.linalg.solve(L, -C.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def solve_care(A, B, Q, R, tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    """Stabilizing solution of A'P + PA - PBR^-1B'P + Q = 0.

    The stable invariant subspace of the Hamiltonian gives the initial
    solution; Newton-Kleinman steps then polish the residual below ``tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    S = B @ Rinv @ B.T
    H = np.block([[A, -S], [-Q, -A.T]])
    T, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U11, U21 = U[:n, :n], U[n:, :n]
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    for _ in range(max_iter):
        res = care_residual(A, B, Q, R, P)
        if np.max(np.abs(res)) <= tol:
            return P
        K = Rinv @ B.T @ P
        Ac = A - B @ K
        P = _lyap(Ac, Q + K.T @ R @ K)
    res = care_residual(A, B, Q, R, P)
    if np.max(np.abs(res)) > tol:
        raise RiccatiError(f"Riccati residual {np.max(np.abs(res)):.3e} above {tol:.1e}")
    return P


def design_gain(model: LinearModel, Q=None, R: float = 1.0) -> SafeGain:
    Q = np.diag([100.0, 1.0, 100.0, 1.0]) if Q is None else np.asarray(Q, dtype=np.float64)
    if R <= 0:
        raise ValueError("R must be positive")
    if not np.allclose(Q, Q.T) or np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise ValueError("Q must be symmetric positive semidefinite")
    if model.controllability_rank() != model.A.shape[0]:
        raise RiccatiError("(A, B) is not controllable")
    P = solve_care(model.A, model.B, Q, np.array([[R]]))
    K = (model.B.T @ P).ravel() / R
    gain = SafeGain(K)
    if np.max(gain.closed_loop_eigenvalues(model).real) >= 0:
        raise RiccatiError("LQR closed loop is not asymptotically stable")
    return gain


def safe_action(gain: SafeGain, state, target, params: PlantParams) -> float:
    """v_neutral - K (state - target), clamped to the drive's voltage range."""
    return kern.safe_voltage(np.asarray(gain.K, dtype=np.float64),
                             np.asarray(state, dtype=np.float64),
                             np.asarray(target, dtype=np.float64), params.as_array())


def save_gain(path, gain: SafeGain, header: str | None = None) -> Path:
    path = Path(path)
    lines = [f"# {line}" for line in (header or "").splitlines()]
    lines.append(" ".join(repr(float(k)) for k in gain.K))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_gain(path) -> SafeGain:
    rows = [ln for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) != 1:
        raise ValueError(f"{path}: expected one row of 4 gains")
    K = np.array([float(tok) for tok in rows[0].split()])
    if K.shape != (4,):
        raise ValueError(f"{path}: expected 4 gains, got {K.size}")
    return SafeGain(K)
