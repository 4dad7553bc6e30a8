"""Compare closing the microphone on the acoustic endpointer with closing it
on the decoder's end-of-utterance probability.

Runs the three training phases (recognition, EOU joint, endpointer branch).
It checks that the EOU joint leaves transcripts alone, then prints the
latency sweep.
"""

import argparse

from rntk import toy
from rntk.decode import DecodeConfig, Recognizer
from rntk.evaluation import endpointing_sweep
from rntk.training import train_endpointer, train_stage1, train_stage2_eou


def fmt(v):
    return "-" if v is None else f"{v}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=800)
    args = ap.parse_args()

    _, splits = toy.splits(0)
    train, ev = splits["train"], splits["eval"]
    base, _ = train_stage1(train, toy.model_config(), toy.stage1_optimizer(max_steps=args.steps))
    eou, _ = train_stage2_eou(base, train, toy.eou_optimizer())
    ckpt, _, acc = train_endpointer(eou, train, toy.ep_optimizer(), "conformer_branch", splits["dev"])
    print(f"endpointer final-silence accuracy on dev: {acc:.3f}")

    cfg = DecodeConfig(endpointing=False)
    a, b = Recognizer(base, cfg), Recognizer(ckpt, cfg)
    diffs = sum(a.decode_record(r).tokens != b.decode_record(r).tokens for r in ev)
    print(f"transcripts changed by the EOU joint: {diffs} of {len(ev)}")

    print("\nrule           eou_th  EP50  EP90  early  no-close")
    for row in endpointing_sweep(ckpt, ev):
        print(
            f"{row['fusion_rule']:<14} {fmt(row['eou_threshold']):>6}  {fmt(row['ep50_ms']):>4}  "
            f"{fmt(row['ep90_ms']):>4}  {row['early_rate']:.2f}   {row['no_close_rate']:.2f}"
        )


if __name__ == "__main__":
    main()
