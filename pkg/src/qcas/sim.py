"""Dense statevector / density-matrix simulation primitives.

Qubit 0 is the most significant bit of the computational-basis index, so the
basis state |q0 q1 ... q_{n-1}> sits at index sum_k q_k * 2^(n-1-k).  All
expectation values are exact (no shot sampling); randomness only enters through
explicitly passed generators in the noise channels.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-10
HERM_TOL = 1e-10
PSD_TOL = 1e-9

# ---------------------------------------------------------------------------
# Gate kinds
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)

_FIXED_1Q = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / _SQRT2,
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "T": np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]], dtype=complex),
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

PAULI = {k: _FIXED_1Q[k] for k in ("I", "X", "Y", "Z")}

CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def _rot(axis: str, theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if axis == "X":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if axis == "Y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array(
        [[cmath.exp(-1j * theta / 2), 0], [0, cmath.exp(1j * theta / 2)]],
        dtype=complex,
    )


def _controlled(u: np.ndarray) -> np.ndarray:
    out = np.eye(4, dtype=complex)
    out[2:, 2:] = u
    return out


@dataclass(frozen=True)
class GateKind:
    """One supported gate type: tag, qubit arity and parameter count."""

    tag: str
    arity: int
    param_count: int

    def matrix(self, angle: float | None = None) -> np.ndarray:
        if self.param_count == 1:
            if angle is None:
                raise ValueError(f"{self.tag} requires an angle")
            if self.tag in ("RX", "RY", "RZ"):
                return _rot(self.tag[1], angle)
            return _controlled(_rot(self.tag[2], angle))
        if angle is not None:
            raise ValueError(f"{self.tag} takes no angle")
        if self.tag == "CNOT":
            return CNOT_MATRIX
        return _FIXED_1Q[self.tag]


GATE_KINDS: dict[str, GateKind] = {}
for _tag in _FIXED_1Q:
    GATE_KINDS[_tag] = GateKind(_tag, 1, 0)
for _tag in ("RX", "RY", "RZ"):
    GATE_KINDS[_tag] = GateKind(_tag, 1, 1)
GATE_KINDS["CNOT"] = GateKind("CNOT", 2, 0)
for _tag in ("CRX", "CRY", "CRZ"):
    GATE_KINDS[_tag] = GateKind(_tag, 2, 1)

# Named search spaces: single-qubit Cliffords, the full Clifford set and the
# generic parameterized set.
SPACE_SINGLE_CLIFFORD = frozenset({"H", "S", "T", "I"})
SPACE_CLIFFORD = frozenset({"H", "S", "T", "I", "CNOT"})
SPACE_GENERIC = frozenset({"RX", "RY", "RZ", "CNOT", "CRX", "CRY", "CRZ"})


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass
class PureState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError("amplitude vector length must be 2^n_qubits")
        norm = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"state not normalized: |psi|^2 = {norm}")

    def density(self) -> "DensityMatrix":
        return DensityMatrix(self.n_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass
class DensityMatrix:
    n_qubits: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        d = 2**self.n_qubits
        if self.entries.shape != (d, d):
            raise ValueError("density matrix must be 2^n x 2^n")
        if np.max(np.abs(self.entries - self.entries.conj().T)) > 1e-8:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(self.entries).real - 1.0) > 1e-8:
            raise ValueError("density matrix trace must be 1")


def basis_state(n_qubits: int, index: int = 0) -> PureState:
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[index] = 1.0
    return PureState(n_qubits, amps)


def ghz_state(n: int) -> PureState:
    """(|0...0> + |1...1>)/sqrt(2)."""
    if n < 1:
        raise ValueError("GHZ state needs at least one qubit")
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = amps[-1] = 1 / _SQRT2
    return PureState(n, amps)


def maximally_mixed(n_qubits: int) -> DensityMatrix:
    d = 2**n_qubits
    return DensityMatrix(n_qubits, np.eye(d, dtype=complex) / d)


# ---------------------------------------------------------------------------
# Circuits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GateInstance:
    kind: GateKind
    targets: tuple[int, ...]
    param_slot: int | None = None

    def __post_init__(self):
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate target qubit")
        if len(self.targets) != self.kind.arity:
            raise ValueError(f"{self.kind.tag} needs {self.kind.arity} targets")
        if (self.param_slot is not None) != (self.kind.param_count == 1):
            raise ValueError("param_slot present iff gate is parametric")


@dataclass
class Circuit:
    n_qubits: int
    gates: list[GateInstance] = field(default_factory=list)

    def __post_init__(self):
        slots = sorted(g.param_slot for g in self.gates if g.param_slot is not None)
        if slots != list(range(len(slots))):
            raise ValueError("param slots must be exactly 0..n_params-1, each once")
        for g in self.gates:
            if any(t >= self.n_qubits or t < 0 for t in g.targets):
                raise ValueError("gate target out of range")

    @property
    def n_params(self) -> int:
        return sum(1 for g in self.gates if g.param_slot is not None)


def gate(tag: str, *targets: int, param_slot: int | None = None) -> GateInstance:
    return GateInstance(GATE_KINDS[tag], tuple(targets), param_slot)


@dataclass
class QaeSplit:
    """Latent (kept) and trash (discarded) qubit index sets of an autoencoder."""

    latent_qubits: tuple[int, ...]
    trash_qubits: tuple[int, ...]

    def __post_init__(self):
        self.latent_qubits = tuple(sorted(self.latent_qubits))
        self.trash_qubits = tuple(sorted(self.trash_qubits))
        if set(self.latent_qubits) & set(self.trash_qubits):
            raise ValueError("latent and trash sets overlap")
        if not self.trash_qubits:
            raise ValueError("trash set must be nonempty")

    @property
    def n_qubits(self) -> int:
        return len(self.latent_qubits) + len(self.trash_qubits)

    def check(self, n_qubits: int):
        if set(self.latent_qubits) | set(self.trash_qubits) != set(range(n_qubits)):
            raise ValueError("split does not cover all circuit qubits")


# ---------------------------------------------------------------------------
# Gate application
# ---------------------------------------------------------------------------


def _apply_matrix(tensor: np.ndarray, mat: np.ndarray, targets: tuple[int, ...],
                  n_qubits: int) -> np.ndarray:
    """Apply a 2^k x 2^k matrix on axes `targets` of a (2,)*n [+ batch] tensor."""
    k = len(targets)
    moved = np.moveaxis(tensor, targets, range(k))
    shape = moved.shape
    flat = moved.reshape(2**k, -1)
    out = (mat @ flat).reshape(shape)
    return np.moveaxis(out, range(k), targets)


def apply_gate(state: PureState, gate: GateInstance, angle: float | None = None) -> PureState:
    """Apply one gate's unitary on its target qubits; other qubits untouched."""
    if any(t >= state.n_qubits for t in gate.targets):
        raise ValueError("gate target out of range")
    mat = gate.kind.matrix(angle)
    tensor = state.amplitudes.reshape((2,) * state.n_qubits)
    out = _apply_matrix(tensor, mat, gate.targets, state.n_qubits)
    return PureState(state.n_qubits, out.reshape(-1))


def apply_circuit_columns(circuit: Circuit, theta: np.ndarray, columns: np.ndarray) -> np.ndarray:
    """Run `circuit` on every column of a (2^n, batch) amplitude matrix."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_params,):
        raise ValueError("theta length must equal circuit.n_params")
    n = circuit.n_qubits
    batch = columns.shape[1]
    tensor = np.ascontiguousarray(columns, dtype=complex).reshape((2,) * n + (batch,))
    for g in circuit.gates:
        angle = theta[g.param_slot] if g.param_slot is not None else None
        tensor = _apply_matrix(tensor, g.kind.matrix(angle), g.targets, n)
    return tensor.reshape(2**n, batch)


def run_circuit(input: PureState, circuit: Circuit, theta=()) -> PureState:
    """Sequentially apply all gates of `circuit` to `input`."""
    if input.n_qubits != circuit.n_qubits:
        raise ValueError("state width does not match circuit width")
    out = apply_circuit_columns(circuit, np.asarray(theta, dtype=float),
                                input.amplitudes[:, None])
    return PureState(input.n_qubits, out[:, 0])


def circuit_unitary(circuit: Circuit, theta=()) -> np.ndarray:
    """Dense unitary of the circuit; column k is the image of basis state |k>."""
    d = 2**circuit.n_qubits
    return apply_circuit_columns(circuit, np.asarray(theta, dtype=float),
                                 np.eye(d, dtype=complex))


# ---------------------------------------------------------------------------
# Fidelities and partial trace
# ---------------------------------------------------------------------------


def pure_fidelity(a: PureState, b: PureState) -> float:
    """|<a|b>|^2."""
    if a.n_qubits != b.n_qubits:
        raise ValueError("state widths differ")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -PSD_TOL:
        raise ValueError(f"matrix has negative eigenvalue {vals.min()}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def state_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity Tr[sqrt(sqrt(rho) sigma sqrt(rho))]^2.

    Evaluated as the squared trace norm of sqrt(rho) sqrt(sigma), which is
    the same quantity without square-rooting near-zero eigenvalues.
    """
    if rho.n_qubits != sigma.n_qubits:
        raise ValueError("density matrix widths differ")
    product = _psd_sqrt(rho.entries) @ _psd_sqrt(sigma.entries)
    f = float(np.sum(np.linalg.svd(product, compute_uv=False)) ** 2)
    return min(max(f, 0.0), 1.0)


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduced density matrix on the qubit set `keep`."""
    keep = tuple(sorted(keep))
    n = rho.n_qubits
    if not keep:
        raise ValueError("keep set must be nonempty")
    if any(q < 0 or q >= n for q in keep):
        raise ValueError("keep index out of range")
    traced = tuple(q for q in range(n) if q not in keep)
    tensor = rho.entries.reshape((2,) * (2 * n))
    for q in reversed(traced):
        tensor = np.trace(tensor, axis1=q, axis2=q + tensor.ndim // 2)
    d = 2 ** len(keep)
    return DensityMatrix(len(keep), tensor.reshape(d, d))


def _pure_trash_overlap(encoded: np.ndarray, split: QaeSplit, reference: PureState) -> float:
    """<a| Tr_A[|psi><psi|] |a> for a pure encoded state, without forming rho."""
    n = split.n_qubits
    tensor = encoded.reshape((2,) * n)
    # move trash axes last -> matrix (dim_A, dim_B); F = sum_A |row . conj(a)|^2
    perm = list(split.latent_qubits) + list(split.trash_qubits)
    mat = np.transpose(tensor, perm).reshape(2 ** len(split.latent_qubits), -1)
    proj = mat @ reference.amplitudes.conj()
    return float(np.sum(np.abs(proj) ** 2))


def trash_cost(circuit: Circuit, theta, input: PureState, split: QaeSplit,
               reference: PureState) -> float:
    """1 - F(trash subsystem after encoding, reference); 0 iff they match."""
    split.check(circuit.n_qubits)
    if reference.n_qubits != len(split.trash_qubits):
        raise ValueError("reference width must equal trash width")
    encoded = run_circuit(input, circuit, theta)
    f = _pure_trash_overlap(encoded.amplitudes, split, reference)
    return min(max(1.0 - f, 0.0), 1.0)


def local_trash_cost(circuit: Circuit, theta, input: PureState, split: QaeSplit) -> float:
    """Local-measurement variant: 1 - mean per-trash-qubit |0> population."""
    split.check(circuit.n_qubits)
    encoded = run_circuit(input, circuit, theta)
    rho = encoded.density()
    pops = []
    for q in split.trash_qubits:
        red = partial_trace(rho, (q,))
        pops.append(float(red.entries[0, 0].real))
    return 1.0 - float(np.mean(pops))


def _cswap_matrix() -> np.ndarray:
    out = np.eye(8, dtype=complex)
    out[[5, 6], :] = out[[6, 5], :]
    return out


def swap_test_expectation(trash_state: DensityMatrix, reference: PureState) -> float:
    """SWAP-test fidelity estimate via the explicit ancilla circuit, exactly.

    Builds (ancilla (x) trash (x) reference), applies H, the controlled-SWAPs
    and H, and maps P(ancilla=0) to fidelity via F = 2 P(0) - 1.  The mixed
    trash state is handled by running each eigenvector through the circuit and
    weighting by its eigenvalue (exact expectation, no shots).
    """
    m = trash_state.n_qubits
    if reference.n_qubits != m:
        raise ValueError("trash and reference widths differ")
    vals, vecs = np.linalg.eigh(trash_state.entries)
    if vals.min() < -PSD_TOL:
        raise ValueError("trash state not positive semidefinite")
    n_total = 1 + 2 * m
    h = GATE_KINDS["H"].matrix()
    cswap = _cswap_matrix()
    p0 = 0.0
    for lam, vec in zip(vals, vecs.T):
        if lam <= 0.0:
            continue
        full = np.zeros((2,) * n_total, dtype=complex)
        amps = np.kron(np.kron([1.0, 0.0], vec), reference.amplitudes)
        full = amps.reshape((2,) * n_total)
        full = _apply_matrix(full, h, (0,), n_total)
        for i in range(m):
            full = _apply_matrix(full, cswap, (0, 1 + i, 1 + m + i), n_total)
        full = _apply_matrix(full, h, (0,), n_total)
        amps = full.reshape(2, -1)
        p0 += lam * float(np.sum(np.abs(amps[0]) ** 2))
    f = 2.0 * p0 - 1.0
    return min(max(f, 0.0), 1.0)


def encoded_output_state(circuit: Circuit, theta, input: PureState, split: QaeSplit,
                         reference: PureState) -> DensityMatrix:
    """Encode, trace out trash, substitute the fresh reference, decode with U^dag."""
    split.check(circuit.n_qubits)
    n = circuit.n_qubits
    encoded = run_circuit(input, circuit, theta)
    rho_a = partial_trace(encoded.density(), split.latent_qubits)
    ref_rho = reference.density()
    # rebuild on (latent_qubits..., trash_qubits...) then permute into place
    combined = np.kron(rho_a.entries, ref_rho.entries)
    order = list(split.latent_qubits) + list(split.trash_qubits)
    perm = [order.index(q) for q in range(n)]
    tensor = combined.reshape((2,) * (2 * n))
    tensor = np.transpose(tensor, perm + [n + p for p in perm])
    rho_new = tensor.reshape(2**n, 2**n)
    u = circuit_unitary(circuit, theta)
    out = u.conj().T @ rho_new @ u
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(n, out)


def reconstruction_fidelity(circuit: Circuit, theta, input: PureState, split: QaeSplit,
                            reference: PureState, target: PureState | None = None) -> float:
    """Round-trip fidelity of the autoencoder against `target` (default: input)."""
    rho_out = encoded_output_state(circuit, theta, input, split, reference)
    cmp = input if target is None else target
    f = float(np.real(cmp.amplitudes.conj() @ rho_out.entries @ cmp.amplitudes))
    return min(max(f, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Noise channels and encodings
# ---------------------------------------------------------------------------


def bitflip_noise_circuit(n_qubits: int, p: float, rng: np.random.Generator) -> Circuit:
    """Independently per qubit, an X gate with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    gates = [gate("X", q) for q in range(n_qubits) if rng.random() < p]
    return Circuit(n_qubits, gates)


def depolarize(rho: DensityMatrix, p: float) -> DensityMatrix:
    """rho -> (1 - p) rho + p * I/d over the full Hilbert dimension d."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    d = 2**rho.n_qubits
    mixed = np.eye(d, dtype=complex) / d
    return DensityMatrix(rho.n_qubits, (1.0 - p) * rho.entries + p * mixed)


def pauli_channel_apply(state: PureState, p: float, rng: np.random.Generator) -> PureState:
    """Per qubit, apply I/X/Y/Z with probabilities {1-3p/4, p/4, p/4, p/4}."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    probs = [1.0 - 3.0 * p / 4.0, p / 4.0, p / 4.0, p / 4.0]
    labels = ("I", "X", "Y", "Z")
    out = state
    for q in range(state.n_qubits):
        pick = labels[rng.choice(4, p=probs)]
        if pick != "I":
            out = apply_gate(out, gate(pick, q))
    return out


def amplitude_encode(x) -> PureState:
    """Zero-pad to the next power of two, L2-normalize and load as amplitudes."""
    x = np.asarray(x, dtype=float).ravel()
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ValueError("cannot amplitude-encode the all-zero vector")
    n = max(1, math.ceil(math.log2(len(x))))
    amps = np.zeros(2**n, dtype=complex)
    amps[: len(x)] = x / norm
    # renormalize once more against rounding
    amps /= np.linalg.norm(amps)
    return PureState(n, amps)
