"""Walk through the transducer lattice on a tiny example.

Computes the loss with the forward-backward recursions, checks it against
brute-force path enumeration, then shows what the FastEmit weight does to the
gradient.
"""

import numpy as np

from rntk.transducer import LossConfig, brute_force_rnnt_loss, count_paths, rnnt_loss


def main():
    rng = np.random.default_rng(0)
    T, U, V = 4, 2, 3
    logits = rng.normal(size=(T, U + 1, V + 1))
    targets = [2, 1]

    plain = LossConfig(fastemit_lambda=0.0)
    loss, grad = rnnt_loss(logits, targets, plain)
    print(f"{T} frames, {U} labels: {count_paths(T, U)} alignments")
    print(f"forward-backward loss  {loss:.15f}")
    print(f"enumerated paths loss  {brute_force_rnnt_loss(logits, targets):.15f}")

    # each (t, u) gradient row sums to zero because it is softmax minus occupancy
    print("max |row sum| of the gradient:", float(np.abs(grad.sum(-1)).max()))

    lam = 0.01
    _, fe = rnnt_loss(logits, targets, LossConfig(fastemit_lambda=lam))
    print(f"\nFastEmit lambda={lam}")
    print("  blank column unchanged:", bool((fe[..., 0] == grad[..., 0]).all()))
    ratio = fe[..., 1:][grad[..., 1:] != 0] / grad[..., 1:][grad[..., 1:] != 0]
    print(f"  label columns scaled by {ratio.min():.6f} .. {ratio.max():.6f}")


if __name__ == "__main__":
    main()
