"""Train a small pooled two-language recognizer and stream one utterance.

No language input is given to the model. The script prints the partial
transcript after every 30 ms stacked frame, then the final transcript of a
code-switched utterance. Use --steps to trade time for accuracy; the toy
default of 3000 steps takes a couple of minutes.
"""

import argparse

from rntk import toy
from rntk.decode import DecodeConfig, Recognizer, format_partials
from rntk.metrics import corpus_wer, segment_accuracy
from rntk.training import train_stage1


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=800)
    args = ap.parse_args()

    specs, splits = toy.splits(0)
    print(f"train {len(splits['train'])} utterances over {len(specs)} languages")
    ckpt, log = train_stage1(splits["train"], toy.model_config(), toy.stage1_optimizer(max_steps=args.steps))
    print(f"loss {log.smoothed()[0]:.2f} -> {log.smoothed()[-1]:.2f} after {args.steps} steps")

    rec = Recognizer(ckpt, DecodeConfig(endpointing=False))
    for lang in ("L0", "L1"):
        pairs = [(r.tokens, rec.decode_record(r).tokens) for r in splits["eval"] if r.language_tag == lang]
        print(f"{lang} WER {corpus_wer(pairs):.3f}")

    utt = splits["eval"][0]
    res = rec.decode_record(utt, streaming=True)
    print(f"\nstreaming {utt.id}, reference {utt.tokens}")
    print("frame\tms\ttokens\tposteriors\tp_eou\tclosed")
    print(format_partials(res.partials), end="")

    cs = splits["codeswitch_eval"][0]
    hyp = rec.decode_record(cs).tokens
    print(f"\ncode-switched {cs.language_tag}: ref {cs.tokens}")
    print(f"  hyp {list(hyp)}, per-segment accuracy {segment_accuracy(cs.tokens, hyp, cs.segments)}")


if __name__ == "__main__":
    main()
