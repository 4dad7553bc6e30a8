"""Per-step decoder cost of the recurrent and the embedding prediction network.

Prints the analytic multiply-accumulate counts at toy and full-size dims. It
also times decoding of freshly initialised variants on the toy eval set.
"""

from rntk import toy
from rntk.evaluation import benchmark_sweep
from rntk.metrics import decoder_macs_per_step
from rntk.model import Checkpoint, ModelConfig, init_params
from rntk.frontend import compute_global_stats


def main():
    for label, cfg in (("toy", toy.model_config()), ("full size", ModelConfig.production())):
        lstm = decoder_macs_per_step(cfg)
        emb = decoder_macs_per_step(cfg.__class__(**{**cfg.to_dict(), "predictor_kind": "embedding"}))
        print(f"{label:>9}: lstm {lstm:>9} MACs/step, embedding {emb:>9} ({emb / lstm:.1%})")

    _, splits = toy.splits(0)
    ev = splits["eval"][:40]
    cfg = toy.model_config()
    base = Checkpoint(init_params(cfg, 0), cfg, compute_global_stats(ev))
    print("\nkind       width  RT50     RT90     param bytes")
    for row in benchmark_sweep(base, ev, width_multipliers=(0.5, 1.0)):
        print(
            f"{row['predictor_kind']:<10} {row['width_multiplier']:>5}  {row['rt50']:.5f}  "
            f"{row['rt90']:.5f}  {row['param_bytes']}"
        )


if __name__ == "__main__":
    main()
