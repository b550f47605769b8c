import math

import numpy as np

from ..errors import NumericalError, TrainingDiverged
from .augment import NO_AUGMENT, augment_batch
from .optim import OptimizerState


def iterate_minibatches(n, batch_size, rng):
    """Endless stream of index batches; reshuffles at every epoch boundary."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def train(net, inputs, targets, steps, batch_size=64, loss="cross_entropy_soft",
          opt=None, augment=NO_AUGMENT, rng=None, in_place=False):
    """Minibatch training. Returns ``(network, loss trace)``.

    The input network is left untouched unless ``in_place`` is set. Each
    drawn batch is freshly augmented, so every epoch sees different variants.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets differ in length")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if rng is None:
        rng = np.random.default_rng(0)
    if opt is None:
        opt = OptimizerState()
    net = net if in_place else net.copy()
    params = [p for _, _, p in net.parameters()]
    trace = []
    batches = iterate_minibatches(len(inputs), batch_size, rng)
    for step in range(steps):
        idx = next(batches)
        xb = inputs[idx]
        if augment.active:
            xb = augment_batch(xb, augment, rng)
        try:
            value, grads = net.loss_and_gradients(xb, targets[idx], loss)
        except NumericalError as exc:
            raise TrainingDiverged(step, float("nan"), exc.layer) from exc
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        opt.step(params, grads)
        trace.append(value)
    return net, trace
