"""Classical side of order finding for N = 15, a = 11, and the compiled circuit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import qsim


class InstanceError(ValueError):
    pass


class SharedFactorError(InstanceError):
    """gcd(a, N) > 1, so the base already exposes a factor."""

    def __init__(self, N: int, a: int, factor: int):
        super().__init__(f"gcd({a}, {N}) = {factor} is already a factor of {N}")
        self.factor = factor


@dataclass(frozen=True)
class FactoringInstance:
    N: int
    a: int
    m: int = 2  # output register width: one measured qubit + one redundant |0>


def validate_instance(N: int, a: int, m: int = 2) -> FactoringInstance:
    if N < 2 or a < 2:
        raise InstanceError(f"need N >= 2 and a >= 2, got N={N}, a={a}")
    if a >= N:
        raise InstanceError(f"base a={a} must be smaller than N={N}")
    g = math.gcd(a, N)
    if g != 1:
        raise SharedFactorError(N, a, g)
    return FactoringInstance(N, a, m)


def classical_order(a: int, N: int) -> int:
    """Smallest r > 0 with a**r = 1 mod N, by brute force."""
    if math.gcd(a, N) != 1:
        raise InstanceError(f"{a} has no multiplicative order mod {N}")
    r, x = 1, a % N
    while x != 1 % N:
        x = (x * a) % N
        r += 1
    return r


@dataclass(frozen=True)
class PeriodReadout:
    measured_bit: int
    redundant_bits: tuple = (0,)

    def __post_init__(self):
        if self.measured_bit not in (0, 1) or any(b not in (0, 1) for b in self.redundant_bits):
            raise ValueError("readout bits must be 0 or 1")

    @property
    def numerator(self) -> int:
        """Measured qubit is the most significant bit."""
        k = self.measured_bit
        for b in self.redundant_bits:
            k = (k << 1) | b
        return k


@dataclass(frozen=True)
class FactoringResult:
    success: bool
    factors: tuple = ()
    period: int | None = None

    def __bool__(self) -> bool:
        return self.success


FAILURE = FactoringResult(False)


def postprocess(readout: PeriodReadout, instance: FactoringInstance) -> FactoringResult:
    width = 1 + len(readout.redundant_bits)
    if width != instance.m:
        raise ValueError(f"readout has {width} bits, instance expects {instance.m}")
    k = readout.numerator
    if k == 0:
        return FAILURE
    r = 2**instance.m // math.gcd(k, 2**instance.m)
    if r % 2:
        return FactoringResult(False, period=r)
    half = pow(instance.a, r // 2, instance.N)
    if half == instance.N - 1:
        return FactoringResult(False, period=r)
    factors = tuple(sorted((math.gcd(half - 1, instance.N), math.gcd(half + 1, instance.N))))
    if any(f in (1, instance.N) for f in factors):
        return FactoringResult(False, period=r)
    return FactoringResult(True, factors, r)


SHOR_15 = FactoringInstance(15, 11)

CIRCUIT_QUBITS = ("q1", "q2", "q3")
OUTPUT_QUBIT = "q2"
OUTPUT_BASIS = qsim.PAULI_X


def compiled_circuit() -> list:
    """Gate list of the simplified order-finding circuit.

    q1 <-> Bob's qubit 1, q2 <-> Bob's qubit 2 (the readout, measured in X),
    q3 <-> Bob's qubit 3. The first CNOT is what Alice's post-selection
    prepares remotely; the second is Bob's.
    """
    return [qsim.H("q1"), qsim.CNOT("q1", "q2"), qsim.CNOT("q2", "q3")]


def run_compiled(shots: int, rng: np.random.Generator) -> np.ndarray:
    """Output bits (0/1) of ``shots`` monolithic executions."""
    state = qsim.new_register(CIRCUIT_QUBITS)
    for gate in compiled_circuit():
        state = qsim.apply_gate(state, gate)
    batch = state.batch(shots)
    outcomes, _ = batch.measure(OUTPUT_QUBIT, OUTPUT_BASIS, uniforms=rng.random(shots))
    return (1 - outcomes.astype(np.int64)) // 2
