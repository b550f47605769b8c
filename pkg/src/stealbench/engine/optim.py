import numpy as np

DEFAULT_LR = {"sgd": 0.01, "rmsprop": 0.001}


class OptimizerState:
    """Vanilla SGD or RMSProp, with per-weight accumulators for RMSProp."""

    def __init__(self, kind="rmsprop", learning_rate=None, decay=0.9, epsilon=1e-8):
        if kind not in DEFAULT_LR:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.learning_rate = float(DEFAULT_LR[kind] if learning_rate is None else learning_rate)
        if self.learning_rate <= 0 or decay <= 0 or epsilon <= 0:
            raise ValueError("optimizer hyperparameters must be positive")
        self.decay = float(decay)
        self.epsilon = float(epsilon)
        self.accumulators = None

    def step(self, params, grads):
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.learning_rate * g
            return
        if self.accumulators is None:
            self.accumulators = [np.zeros_like(p) for p in params]
        for p, g, acc in zip(params, grads, self.accumulators):
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            p -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)

    def fresh(self):
        return OptimizerState(self.kind, self.learning_rate, self.decay, self.epsilon)
