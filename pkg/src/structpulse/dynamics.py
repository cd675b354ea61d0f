"""Piecewise-constant unitary dynamics for small dense Hilbert spaces.

Provides the control-task container, slice propagators built from the
Hermitian eigendecomposition (exactly unitary up to roundoff), the
phase-invariant gate fidelity, and adjoint fidelity gradients in two
flavours: the first-order co-state form and an exact mode based on the
divided-difference (Daleckii-Krein) kernel of the matrix exponential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
FIDELITY_UNITARY_TOL = 1e-8

GRADIENT_MODES = ("paper-form", "exact")


class DynamicsError(ValueError):
    """Invalid operator, shape, or tolerance violation in the dynamics layer."""


def hermiticity_defect(H: np.ndarray) -> float:
    """Max elementwise deviation of H from its conjugate transpose."""
    return float(np.abs(H - H.conj().T).max())


def unitarity_defect(U: np.ndarray) -> float:
    """Max-norm of U^dag U - I."""
    d = U.shape[0]
    return float(np.abs(U.conj().T @ U - np.eye(d)).max())


def _as_operator(M, name: str, dim: int | None = None) -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DynamicsError(f"{name} must be a square matrix, got shape {A.shape}")
    if dim is not None and A.shape[0] != dim:
        raise DynamicsError(f"{name} has dimension {A.shape[0]}, expected {dim}")
    A = A.copy()
    A.setflags(write=False)
    return A


@dataclass(frozen=True)
class TaskSpec:
    """A gate-synthesis control task.

    Attributes
    ----------
    name : str
        Task identifier, also used to key deterministic initializations.
    dim : int
        Hilbert dimension (2, 3, or 4).
    drift : (d, d) complex ndarray
        Drift Hamiltonian, Hermitian, in angular-frequency units.
    controls : tuple of (d, d) complex ndarray
        Control Hamiltonians, one per channel.
    target : (d, d) complex ndarray
        Target unitary.
    horizon : float
        Total evolution time T.
    slices : int
        Number of piecewise-constant time slices N; dt = T / N.
    u_max : float
        Symmetric amplitude bound |u| <= u_max.
    init_scale : float
        Half-width of the uniform initialization interval.
    cutoff : float
        Band-limit cutoff in cycles per unit time (used by the
        structure layer).
    """

    name: str
    dim: int
    drift: np.ndarray
    controls: tuple
    target: np.ndarray
    horizon: float
    slices: int
    u_max: float
    init_scale: float
    cutoff: float

    def __post_init__(self):
        if self.dim not in (2, 3, 4):
            raise DynamicsError(f"dim must be 2, 3 or 4, got {self.dim}")
        if self.slices < 2:
            raise DynamicsError(f"slices must be >= 2, got {self.slices}")
        if not self.controls:
            raise DynamicsError("need at least one control Hamiltonian")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise DynamicsError(f"horizon must be positive, got {self.horizon}")
        if self.u_max <= 0:
            raise DynamicsError(f"u_max must be positive, got {self.u_max}")
        if self.init_scale <= 0:
            raise DynamicsError(f"init_scale must be positive, got {self.init_scale}")
        if self.cutoff <= 0:
            raise DynamicsError(f"cutoff must be positive, got {self.cutoff}")
        object.__setattr__(self, "drift", _as_operator(self.drift, "drift", self.dim))
        object.__setattr__(self, "controls", tuple(
            _as_operator(H, f"controls[{m}]", self.dim) for m, H in enumerate(self.controls)))
        object.__setattr__(self, "target", _as_operator(self.target, "target", self.dim))
        defect = hermiticity_defect(self.drift)
        if defect > HERMITIAN_TOL:
            raise DynamicsError(f"drift is not Hermitian: defect {defect:.3e} > {HERMITIAN_TOL}")
        for m, H in enumerate(self.controls):
            defect = hermiticity_defect(H)
            if defect > HERMITIAN_TOL:
                raise DynamicsError(
                    f"controls[{m}] is not Hermitian: defect {defect:.3e} > {HERMITIAN_TOL}")
        defect = unitarity_defect(self.target)
        if defect > UNITARY_TOL:
            raise DynamicsError(f"target is not unitary: defect {defect:.3e} > {UNITARY_TOL}")

    @property
    def channels(self) -> int:
        return len(self.controls)

    @property
    def dt(self) -> float:
        return self.horizon / self.slices

    @property
    def shape(self) -> tuple:
        """Shape (M, N) of a control field for this task."""
        return (self.channels, self.slices)


def check_field(task: TaskSpec, u: np.ndarray) -> np.ndarray:
    """Validate a control field: shape (M, N) and finite entries."""
    u = np.asarray(u, dtype=float)
    if u.shape != task.shape:
        raise DynamicsError(
            f"control field shape {u.shape} does not match task '{task.name}' "
            f"expected {task.shape}")
    if not np.all(np.isfinite(u)):
        raise DynamicsError("control field contains non-finite entries")
    return u


def is_box_feasible(task: TaskSpec, u: np.ndarray) -> bool:
    return bool(np.all(np.abs(u) <= task.u_max))


@dataclass(frozen=True)
class PropagationTrace:
    """Forward propagation products of one control field.

    step_props[k] is the slice propagator G_k, cumulative[k] the partial
    product U_k with U_0 = I, and final the end-time unitary U_N.
    """

    step_props: np.ndarray   # (N, d, d)
    cumulative: np.ndarray   # (N + 1, d, d)

    @property
    def final(self) -> np.ndarray:
        return self.cumulative[-1]


def hermitian_expm(H: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i dt H) for Hermitian H via the real-eigenvalue spectral form."""
    H = np.asarray(H, dtype=complex)
    defect = hermiticity_defect(H)
    if defect > HERMITIAN_TOL:
        raise DynamicsError(
            f"hermitian_expm requires a Hermitian matrix: defect {defect:.3e} > {HERMITIAN_TOL}")
    if not np.isfinite(dt):
        raise DynamicsError(f"dt must be finite, got {dt}")
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def _slice_hamiltonians(task: TaskSpec, u: np.ndarray) -> np.ndarray:
    """H_k = H0 + sum_m u[m, k] H_m for all slices, shape (N, d, d)."""
    ctrl = np.stack(task.controls)
    return task.drift[None, :, :] + np.einsum("mk,mij->kij", u, ctrl)


def _propagate_eig(task: TaskSpec, u: np.ndarray, drift: np.ndarray | None = None):
    """Forward pass returning (G, U, eigvals, eigvecs).

    G has shape (N, d, d), U shape (N + 1, d, d) with U[0] = I.  The
    eigendecomposition of each slice Hamiltonian is cached for reuse by
    the exact gradient kernel.  `drift` optionally overrides the task
    drift (used by the perturbation scenarios).
    """
    u = check_field(task, u)
    N, d, dt = task.slices, task.dim, task.dt
    ctrl = np.stack(task.controls)
    H0 = task.drift if drift is None else drift
    Hk = H0[None, :, :] + np.einsum("mk,mij->kij", u, ctrl)
    w, v = np.linalg.eigh(Hk)
    phase = np.exp(-1j * dt * w)
    G = np.einsum("kij,kj,klj->kil", v, phase, v.conj())
    U = np.empty((N + 1, d, d), dtype=complex)
    U[0] = np.eye(d)
    for k in range(N):
        U[k + 1] = G[k] @ U[k]
    return G, U, w, v


def propagate(task: TaskSpec, u: np.ndarray) -> PropagationTrace:
    """Propagate a control field through all slices.

    Each slice propagator is hermitian_expm(H0 + sum_m u_m[k] H_m, dt);
    the cumulative products satisfy U_{k+1} = G_k U_k.
    """
    G, U, _, _ = _propagate_eig(task, u)
    return PropagationTrace(step_props=G, cumulative=U)


def gate_fidelity(U_final: np.ndarray, U_tar: np.ndarray, d: int | None = None) -> float:
    """|Tr(U_tar^dag U_final)|^2 / d^2, invariant under global phases."""
    U_final = np.asarray(U_final, dtype=complex)
    U_tar = np.asarray(U_tar, dtype=complex)
    if d is None:
        d = U_tar.shape[0]
    for name, U in (("U_final", U_final), ("U_tar", U_tar)):
        defect = unitarity_defect(U)
        if defect > FIDELITY_UNITARY_TOL:
            raise DynamicsError(
                f"gate_fidelity: {name} is not unitary (defect {defect:.3e} > "
                f"{FIDELITY_UNITARY_TOL})")
    overlap = np.trace(U_tar.conj().T @ U_final)
    # roundoff can push the ratio marginally past 1; keep the [0, 1] contract
    return min(1.0, float(abs(overlap) ** 2 / d**2))


def _overlap(task: TaskSpec, U_final: np.ndarray) -> complex:
    return complex(np.trace(task.target.conj().T @ U_final))


def _backward_costates(task: TaskSpec, G: np.ndarray) -> np.ndarray:
    """B_k = G_k^dag ... G_{N-1}^dag U_tar, with B_N = U_tar; shape (N+1, d, d)."""
    N = task.slices
    B = np.empty_like(G, shape=(N + 1, task.dim, task.dim))
    B[N] = task.target
    for k in range(N - 1, -1, -1):
        B[k] = G[k].conj().T @ B[k + 1]
    return B


def fidelity_and_gradient(task: TaskSpec, u: np.ndarray, mode: str = "exact",
                          drift: np.ndarray | None = None):
    """Gate fidelity and its gradient in one forward + one backward sweep.

    Parameters
    ----------
    task, u : the control task and an (M, N) field.
    mode : "exact" or "paper-form"
        "exact" differentiates each slice propagator with the eigenbasis
        divided-difference kernel, so the result matches finite
        differences of the discrete objective.  "paper-form" is the
        first-order co-state expression -(2 dt / d^2) Im Tr(L_{k+1}^dag
        H_m U_{k+1}) with L_k = G_k^dag L_{k+1}; the two agree as
        dt -> 0 at fixed horizon.
    drift : optional drift override for perturbed dynamics.

    Returns
    -------
    (fidelity, gradient) with gradient shaped (M, N); the gradient is of
    the infidelity 1 - F, i.e. descent directions decrease infidelity.
    """
    if mode not in GRADIENT_MODES:
        raise DynamicsError(f"unknown gradient mode {mode!r}; expected one of {GRADIENT_MODES}")
    d, dt, N = task.dim, task.dt, task.slices
    ctrl = np.stack(task.controls)
    G, U, w, v = _propagate_eig(task, u, drift=drift)
    g = _overlap(task, U[N])
    F = min(1.0, abs(g) ** 2 / d**2)
    B = _backward_costates(task, G)

    if mode == "paper-form":
        # co-state L_{k+1} = B_{k+1} * overlap; the Im Tr(...) contraction
        # then carries conj(overlap) onto the backward product.
        tr = np.einsum("kji,mjl,kli->mk", B[1:].conj(), ctrl, U[1:])
        grad = -(2.0 * dt / d**2) * np.imag(np.conj(g) * tr)
        return float(F), grad

    # Exact mode: Daleckii-Krein kernel of exp(-i dt H) in each slice
    # eigenbasis.  Phi[p, q] = (f(l_p) - f(l_q)) / (l_p - l_q) with the
    # diagonal limit -i dt f(l_p), written in a removable-singularity-free
    # sinc form.
    dl = w[:, :, None] - w[:, None, :]
    avg = 0.5 * (w[:, :, None] + w[:, None, :])
    Phi = -1j * dt * np.exp(-1j * dt * avg) * np.sinc(dt * dl / (2.0 * np.pi))
    vH = v.conj().transpose(0, 2, 1)
    E = np.einsum("kpi,mij,kjq->kmpq", vH, ctrl, v)
    C = np.matmul(np.matmul(vH, U[:N]), np.matmul(B[1:].conj().transpose(0, 2, 1), v))
    dg = np.einsum("kpq,kmpq,kqp->mk", Phi, E, C)
    grad = -(2.0 / d**2) * np.real(np.conj(g) * dg)
    return float(F), grad


def fidelity_gradient(task: TaskSpec, u: np.ndarray, mode: str = "exact") -> np.ndarray:
    """Gradient of the infidelity 1 - F(u); see fidelity_and_gradient."""
    return fidelity_and_gradient(task, u, mode=mode)[1]


def task_fidelity(task: TaskSpec, u: np.ndarray) -> float:
    """Gate fidelity of the propagated field against the task target."""
    trace = propagate(task, u)
    return gate_fidelity(trace.final, task.target, task.dim)
