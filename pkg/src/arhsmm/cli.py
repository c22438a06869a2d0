"""Command-line pipeline: preprocess, simulate, train, score, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
Every file handoff is self-describing (rate headers in sequence, label and
model files), so silent unit mismatches are impossible.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import evaluate as ev
from . import inference, learning, preprocess, simulate
from .messages import forward
from .model import (ModelFormatError, ModelParams, Sequence, load_model,
                    save_model, validate_model, validate_path)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOCONV = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class DataError(Exception):
    pass


def _load_sequence(path) -> Sequence:
    samples, rate = preprocess.read_signal_file(path)
    if rate is None:
        raise DataError(f"{path}: missing '# rate=' header (not a processed sequence file)")
    return Sequence(samples=samples, sample_rate=rate)


def _data_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise DataError(f"no data files in {d}")
    return files


def _match_label_file(labels_dir: Path, stem: str) -> Path:
    hits = sorted(p for p in labels_dir.iterdir() if p.is_file() and p.stem == stem)
    if not hits:
        raise DataError(f"no label file for {stem!r} in {labels_dir}")
    return hits[0]


def _sniff_labels_kind(path) -> str:
    # label tracks carry a rate header and integer rows; annotation rows
    # are fractional seconds, so a decimal point marks an events file
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "rate=" in line:
                    return "track"
                continue
            return "events" if "." in line else "track"
    return "track"


def _load_label_track(path, kind: str, rate: float, n_samples: int,
                      scorer: int | None) -> preprocess.LabelTrack:
    if kind == "auto":
        kind = _sniff_labels_kind(path)
    if kind == "track":
        track = preprocess.read_label_file(path)
        if track.sample_rate != rate:
            raise DataError(f"{path}: label rate {track.sample_rate} != data rate {rate}")
        if len(track) != n_samples:
            raise DataError(f"{path}: label length {len(track)} != sequence length {n_samples}")
        return track
    events = preprocess.read_annotation_file(path)
    if scorer is not None:
        events = [e for e in events if e.scorer_id == scorer]
        if not events:
            raise DataError(f"{path}: no events for scorer {scorer}")
    track, _ = preprocess.events_to_labels(events, rate, n_samples)
    return track


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    samples, header_rate = preprocess.read_signal_file(args.infile)
    rate_in = args.rate_in if args.rate_in is not None else header_rate
    if rate_in is None:
        raise DataError(f"{args.infile}: no rate header and no --rate-in given")
    rate_out = args.rate_out if args.rate_out is not None else rate_in
    out = preprocess.resample(samples, rate_in, rate_out)
    if args.zscore:
        out = preprocess.zscore(out)
    preprocess.write_sequence_file(args.out, out, rate_out)
    if args.labels_in:
        if not args.labels_out:
            raise DataError("--labels-in requires --labels-out")
        events = preprocess.read_annotation_file(args.labels_in)
        track, clipped = preprocess.events_to_labels(events, rate_out, out.shape[0])
        preprocess.write_label_file(args.labels_out, track)
        if clipped:
            print(f"warning: {clipped} event(s) clipped at recording end", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    seq, path = simulate.sample_sequence(model, args.n, args.seed)
    preprocess.write_sequence_file(args.out, seq.samples, seq.sample_rate)
    preprocess.write_truth_file(args.truth, path, seq.sample_rate)
    return EXIT_OK


def _paper_default_init(seqs: list[Sequence]) -> ModelParams:
    rate = seqs[0].sample_rate
    cfg = learning.InitConfig(sample_rate=rate, ar_order=5,
                              max_duration=int(round(30.0 * rate)))
    return learning.default_unsupervised_init(seqs, cfg)


def cmd_train(args) -> int:
    mode = args.mode
    scorer = None
    if mode.startswith("expert:"):
        try:
            scorer = int(mode.split(":", 1)[1])
        except ValueError:
            raise DataError(f"bad expert id in --mode {mode!r}")
        mode = "expert"
    elif mode not in ("supervised", "unsupervised"):
        raise DataError(f"unknown mode {args.mode!r}")

    seqs = [_load_sequence(p) for p in _data_files(args.data)]
    rates = {s.sample_rate for s in seqs}
    if len(rates) != 1:
        raise DataError(f"mixed sample rates in data: {sorted(rates)}")

    if args.init == "paper-default":
        init = _paper_default_init(seqs)
    else:
        init = load_model(args.init)
        res = validate_model(init)
        if not res.ok:
            raise DataError(f"invalid init model: {res.summary()}")
        if init.sample_rate != seqs[0].sample_rate:
            raise DataError(f"init model rate {init.sample_rate} != data rate {seqs[0].sample_rate}")

    log_lines: list[str] = []
    converged = True
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", learning.FitWarning)
        if mode in ("supervised", "expert"):
            if not args.labels:
                raise DataError(f"--mode {args.mode} requires --labels")
            labels_dir = Path(args.labels)
            if not labels_dir.is_dir():
                raise DataError(f"labels directory not found: {labels_dir}")
            tracks = []
            for p, seq in zip(_data_files(args.data), seqs):
                lp = _match_label_file(labels_dir, p.stem)
                tracks.append(_load_label_track(lp, args.labels_kind, seq.sample_rate,
                                                len(seq), scorer))
            model = learning.supervised_fit(
                seqs, tracks, num_regimes=init.num_regimes,
                ar_order=init.ar_order, max_duration=init.max_duration,
                min_sigma=args.min_sigma)
            ll = sum(forward(model, s).loglik for s in seqs)
            log_lines.append(f"0,{float(ll)!r},nan,")
        else:
            fit = learning.em_fit(seqs, init, max_iters=args.max_iters,
                                  rel_tol=args.rel_tol, min_sigma=args.min_sigma,
                                  workers=args.workers)
            model = fit.model
            converged = fit.converged
            iter_flags: dict[int, list[str]] = {}
            for fl in fit.flags:
                head, _, msg = fl.partition(": ")
                iter_flags.setdefault(int(head.split()[1]), []).append(msg)
            prev = None
            for i, ll in enumerate(fit.loglik_trace):
                rel = "nan" if prev is None else repr(float((ll - prev) / max(1.0, abs(prev))))
                fls = ";".join(iter_flags.get(i, []))
                log_lines.append(f"{i},{float(ll)!r},{rel},{fls}")
                prev = ll
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    save_model(model, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as f:
            f.write("iteration,loglik,rel_change,flags\n")
            f.write("\n".join(log_lines) + "\n")
    return EXIT_OK if converged else EXIT_NOCONV


def cmd_score(args) -> int:
    model = load_model(args.model)
    res = validate_model(model)
    if not res.ok:
        raise DataError(f"invalid model: {res.summary()}")
    data_is_dir = Path(args.data).is_dir()
    if data_is_dir and not Path(args.out).is_dir():
        raise DataError("--data is a directory, so --out must be an existing directory")
    for path in _data_files(args.data) if data_is_dir else [Path(args.data)]:
        seq = _load_sequence(path)
        if seq.sample_rate != model.sample_rate:
            raise DataError(f"{path}: data rate {seq.sample_rate} != model rate "
                            f"{model.sample_rate}; refusing to score")
        hidden, _ = inference.viterbi(model, seq)
        track = inference.labels_from_path(hidden, seq.sample_rate)
        out = Path(args.out)
        dest = out / f"{path.stem}.labels.txt" if out.is_dir() else out
        preprocess.write_label_file(dest, track)
        if args.posteriors:
            stats = learning.e_step(model, seq)
            pout = Path(args.posteriors)
            pdest = pout / f"{path.stem}.gamma.csv" if pout.is_dir() else pout
            with open(pdest, "w", encoding="utf-8") as f:
                f.write(f"# rate={float(seq.sample_rate)!r}\n")
                f.write("# columns=" + ",".join(f"gamma{k}" for k in range(model.num_regimes)) + "\n")
                for row in stats.gamma:
                    f.write(",".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = preprocess.read_label_file(args.pred)
    truth = preprocess.read_label_file(args.truth)
    rate = args.rate or pred.sample_rate
    if pred.sample_rate != truth.sample_rate:
        raise DataError(f"pred rate {pred.sample_rate} != truth rate {truth.sample_rate}")
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = ev.MetricsReport()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ev.MetricWarning)
        for m in wanted:
            if m == "mcc":
                report.mcc = ev.mcc(pred, truth)
            elif m == "f1":
                report.f1 = ev.f1(pred, truth)
            elif m == "event":
                report.event = ev.event_metrics(pred, truth, rate)
            elif m == "nll":
                if not args.model or not args.data:
                    raise DataError("nll metric requires --model and --data")
                model = load_model(args.model)
                seqs = [_load_sequence(p) for p in _data_files(args.data)]
                report.nll = ev.predictive_nll(model, seqs)
                report.nll_per_sequence = report.nll / len(seqs)
            else:
                raise DataError(f"unknown metric {m!r}")
    report.flags.extend(str(w.message) for w in caught)
    lines = report.to_lines()
    text = "\n".join(lines) + "\n"
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.report_json:
        with open(args.report_json, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_validate_truth(args) -> int:
    """Check a truth file against the hidden-path legality rules."""
    path, _ = preprocess.read_truth_file(args.truth)
    model = load_model(args.model)
    res = validate_path(path, model.max_duration)
    if res.ok:
        print("ok")
        return EXIT_OK
    print(res.summary(), file=sys.stderr)
    return EXIT_DATA


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="arhsmm", description=__doc__,
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample/z-score a raw recording")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rate-in", type=float, default=None)
    p.add_argument("--rate-out", type=float, default=None)
    p.add_argument("--zscore", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-in", default=None)
    p.add_argument("--labels-out", default=None)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("simulate", help="draw a sequence and truth path from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="fit a model (supervised, unsupervised or expert)")
    p.add_argument("--mode", required=True,
                   help="supervised | unsupervised | expert:<scorer_id>")
    p.add_argument("--data", required=True, help="directory of processed sequences")
    p.add_argument("--labels", default=None, help="directory of annotation or label files")
    p.add_argument("--labels-kind", choices=("auto", "events", "track"), default="auto")
    p.add_argument("--init", required=True, help="model file or 'paper-default'")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--min-sigma", type=float, default=1e-6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("score", help="Viterbi-decode labels for sequences")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="sequence file or directory")
    p.add_argument("--out", required=True, help="label file or directory")
    p.add_argument("--posteriors", default=None, help="optional gamma dump file/dir")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--metrics", default="mcc,f1,event")
    p.add_argument("--model", default=None, help="model file (for nll)")
    p.add_argument("--data", default=None, help="sequence directory (for nll)")
    p.add_argument("--report", default=None)
    p.add_argument("--report-json", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("validate-truth", help="check hidden-path legality of a truth file")
    p.add_argument("--truth", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_validate_truth)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (DataError, FileNotFoundError, preprocess.FileFormatError,
            ModelFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
