"""
Flujos aleatorios con clave (semilla, rol, índices)
"""
from typing import Optional, Sequence, Tuple

import numpy as np

ROLES = {
    "initial": 0,
    "truth": 1,
    "observation": 2,
    "copies": 3,
    "particles": 4,
    "coupling": 5,
}


class StreamFactory:
    """
    Generadores Philox derivados de SeedSequence(seed, spawn_key=...)

    Cada generador depende solo de su clave, nunca del orden en que se piden,
    así que la planificación de hilos no cambia los sorteos.
    """

    def __init__(self, seed: int, prefix: Tuple[int, ...] = ()):
        if seed is None or int(seed) < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.seed = int(seed)
        self.prefix = tuple(int(k) for k in prefix)

    def for_run(self, run_index: int) -> "StreamFactory":
        """Fábrica hija para la corrida run_index"""
        return StreamFactory(self.seed, self.prefix + (int(run_index),))

    def seed_sequence(self, role: str, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=self.seed,
            spawn_key=self.prefix + (ROLES[role],) + tuple(int(k) for k in key),
        )

    def generator(self, role: str, *key: int) -> np.random.Generator:
        """Generador para (rol, *clave)"""
        return np.random.Generator(np.random.Philox(self.seed_sequence(role, *key)))

    def fingerprint(self) -> int:
        """Entero de 64 bits que identifica la corrida en el manifiesto"""
        state = np.random.SeedSequence(entropy=self.seed, spawn_key=self.prefix)
        return int(state.generate_state(1, dtype=np.uint64)[0])


class StepNoise:
    """
    Incrementos brownianos por paso para un sistema de partículas

    El bloque del paso k sale del generador (rol, k): una fila por partícula,
    columnas [dW | dV]. El bloque se llena en orden C, así que las primeras n
    filas coinciden para cualquier n_rows >= n: la partícula i recibe el mismo
    ruido al variar N. `permutation` reordena filas para pruebas de
    intercambiabilidad.
    """

    def __init__(self, streams: StreamFactory, role: str, n_rows: int, r1: int, r2: int,
                 permutation: Optional[Sequence[int]] = None):
        self.streams = streams
        self.role = role
        self.n_rows = int(n_rows)
        self.r1 = int(r1)
        self.r2 = int(r2)
        self.permutation = None if permutation is None else np.asarray(permutation)

    def draw(self, step: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """(dW, dV) del paso `step`, cada uno ~ N(0, dt·Id) por fila"""
        rng = self.streams.generator(self.role, step)
        block = rng.standard_normal((self.n_rows, self.r1 + self.r2)) * np.sqrt(dt)
        if self.permutation is not None:
            block = block[self.permutation]
        return block[:, :self.r1], block[:, self.r1:]
