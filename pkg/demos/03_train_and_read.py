#!/usr/bin/env python3
"""Train a small model end to end and watch it read.

Uses a 600-pair dataset so the whole run stays around three minutes;
prints per-epoch metrics, then greedy-decodes a few held-out images and
shows where the spotlight travelled for each emitted token.  Expect rough
but recognizable transcriptions at this scale; the full acceptance run uses
2000 pairs and 50 epochs.
"""

from stn import glyphlang, training
from stn.decoder import greedy_decode


def main():
    pairs = glyphlang.dataset_generate(600, seed=7)
    held_out, train_pairs = pairs[:20], pairs[20:]

    config = training.TrainConfig(variant="stnr", epochs=24, seed=0, lr=2e-3)
    print("training STNR on %d pairs, %d epochs..." % (len(train_pairs),
                                                       config.epochs))
    store, rows = training.train_supervised(config, train_pairs)
    for row in rows:
        print("  epoch %2d  train %.3f  val %.3f  val token acc %.3f"
              % (row["epoch"], row["train_loss"], row["val_loss"],
                 row["val_token_acc"]))

    tok, seq, reward = training.evaluate_accuracy(store, held_out)
    print("\nheld out: token acc %.3f, sequence acc %.3f, mean reward %.3f"
          % (tok, seq, reward))

    for image, truth in held_out[:3]:
        decoded, handles, _ = greedy_decode(image, store)
        print("\ntruth:   %s" % " ".join(glyphlang.token_names(truth)))
        print("decoded: %s" % " ".join(glyphlang.token_names(decoded)))
        path = " -> ".join("(%.1f,%.1f)" % (h.x, h.y) for h in handles[:8])
        print("reading path: %s%s" % (path, " ..." if len(handles) > 8 else ""))


if __name__ == "__main__":
    main()
