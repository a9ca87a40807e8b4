"""Train the event LSTM on raw (x, y, polarity) sequences.

The defaults are sized for about a minute on one core: a reduced dataset,
shorter windows and eight epochs. That run only shows the held-out accuracy
climbing (to roughly 40%); the network needs far more updates than it gets
here. ``--full`` switches to the 300 windows per regime, 2,500-event
configuration used by the acceptance suite, which reaches about 90% in
roughly 19 minutes single-threaded. The trained model is written as an ELS1 file that
the ``classify`` and ``stream`` subcommands accept.

    python demos/03_train_lstm.py --out lstm.els
"""
import argparse
import time

from regimecam.dataset import DatasetConfig, build_dataset
from regimecam.lstm import LstmClassifier, LstmHyper, save_model, train
from regimecam.lstm.train import stack_windows, stratified_split
from regimecam.metrics import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full", action="store_true")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="lstm.els")
    args = ap.parse_args()

    per_regime, seq_len, epochs = (300, 2500, 10) if args.full else (60, 1000, 8)
    epochs = args.epochs or epochs
    cfg = DatasetConfig(windows_per_regime=per_regime, seq_len=seq_len, seed=args.seed)
    windows = build_dataset(cfg)
    _, y = stack_windows(windows)
    tr, va = stratified_split(y, 0.2, args.seed)
    train_w, val_w = [windows[i] for i in tr], [windows[i] for i in va]
    print(f"{len(train_w)} training and {len(val_w)} held-out windows of {seq_len} events")

    hyper = LstmHyper(seq_len=seq_len, epochs=epochs, batch=32, lr=2e-3, lr_schedule="cosine",
                      chrono_span=seq_len, dtype="float32", micro_batch=32, seed=args.seed)
    t0 = time.perf_counter()
    params, _ = train(train_w, hyper, val=val_w,
                      on_epoch=lambda r: print(f"  epoch {r.epoch}: loss {r.train_loss:.3f}, "
                                               f"held-out accuracy {r.val_accuracy:.3f} ({r.seconds:.0f} s)"))
    print(f"trained in {(time.perf_counter() - t0) / 60:.1f} min")
    res = evaluate(LstmClassifier(params), val_w)
    print(res.confusion.grid())
    save_model(args.out, params)
    print(f"saved {params.count} parameters to {args.out}")


if __name__ == "__main__":
    main()
