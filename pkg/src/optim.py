"""
Optim - Optimizador Adam
========================
Actualización adaptativa con momentos de primer y segundo orden, weight decay
desacoplado opcional y schedule constante o coseno.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from .exceptions import CheckpointError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Adam:
    """Adam sobre una lista nombrada de parámetros"""

    def __init__(self, named_params: Sequence[Tuple[str, Tensor]], lr: float = 3e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, schedule: str = 'constant',
                 total_steps: Optional[int] = None):
        self.named_params: List[Tuple[str, Tensor]] = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.schedule = schedule
        self.total_steps = total_steps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def current_lr(self) -> float:
        if self.schedule == 'cosine' and self.total_steps:
            progress = min(1.0, self.t / self.total_steps)
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * progress))
        return self.lr

    def step(self) -> None:
        """Aplica una actualización con los gradientes actuales"""
        self.t += 1
        lr = self.current_lr()
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Momentos como tensores nombrados optim.m.* / optim.v.*"""
        arrays = {}
        for name, _ in self.named_params:
            arrays[f"optim.m.{name}"] = self.m[name]
            arrays[f"optim.v.{name}"] = self.v[name]
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], t: int) -> None:
        for name, p in self.named_params:
            for prefix, store in (('optim.m.', self.m), ('optim.v.', self.v)):
                key = prefix + name
                if key not in arrays:
                    raise CheckpointError(f"Falta el momento {key} en el checkpoint")
                store[name] = np.asarray(arrays[key]).astype(p.dtype)
        self.t = int(t)

    def cast(self, dtype) -> None:
        for name in self.m:
            self.m[name] = self.m[name].astype(dtype)
            self.v[name] = self.v[name].astype(dtype)
