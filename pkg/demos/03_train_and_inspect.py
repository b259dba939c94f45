"""Train a reduced model for a few minutes and look inside its predictions.

Uses 600 training samples instead of the desk 2000 so it finishes quickly;
expect lower numbers than the acceptance run.

    python demos/03_train_and_inspect.py
"""

import logging

import numpy as np

from tsground.config import ExperimentConfig
from tsground.diffcore import no_grad
from tsground.lab import evaluate_model, generate_dataset, random_ranking_report, train
from tsground.lab.train import model_from_checkpoint
from tsground.model import collate


def main():
    c = ExperimentConfig(epochs=8)
    train_set = generate_dataset(c, 600, c.seed)
    test_set = generate_dataset(c, 150, c.seed, start_id=600)
    ck, history = train(c, train_set, test_set)
    for h in history:
        print(f"epoch {h['epoch']:2d}  loss {h['loss']:.4f}  eval R@1,IoU=0.5 {h['eval_r1_05']:.1f}")

    model = model_from_checkpoint(ck)
    metrics = evaluate_model(model, test_set)["metrics"]
    rand = random_ranking_report(c, test_set)["metrics"]
    print(f"\nbest epoch {ck.best_epoch}")
    for k in metrics:
        print(f"  {k:<14} trained {metrics[k]:5.1f}   random {rand[k]:5.1f}")

    s = test_set[0]
    batch = collate([s], model.dtype, c.max_words)
    with no_grad():
        out = model(batch)
    ranked = model.predict(batch, top_n=3, out=out)[0]
    print(f"\nsample {s.id}, ground truth {s.gt}")
    for start, end, score in ranked:
        print(f"  [{start:5.2f}, {end:5.2f}]  score {score:.3f}")
    # where each stream put its frame attention; the head convolves every
    # frame, so these weights need not peak inside the segment
    for stream, w in out.fused.frame_weights.items():
        peak = np.argsort(-w[0])[:4]
        inside = np.mean([s.gt[0] <= t < s.gt[1] for t in peak])
        print(f"  {stream:<10} top frames {sorted(peak.tolist())}  inside gt {inside:.0%}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    main()
