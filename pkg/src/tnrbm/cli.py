"""``tnrbm`` command-line front end.

Every command is deterministic given ``--seed``.  Exit codes: 0 success,
1 validation or tolerance failure, 2 usage error, 3 I/O or file-format error.
"""
import argparse
import csv
import io
import math
import os
import sys

import numpy as np

from . import dataio
from .errors import FormatError, ShapeError, TnrbmError
from .models import model_for
from .tasks import (
    CompletionTask,
    add_salt_pepper,
    classification_error,
    complete,
    denoise,
    extract_features,
    half_mask,
    knn_predict,
    knn_validation_score,
    mean_psnr,
    psnr,
    rank_sweep,
)
from .tensor import unvec, vec
from .training import DEFAULT_LEARNING_RATE_GRID, TrainConfig, exact_gradient, gradient_check, train

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
GRAD_CHECK_MAX_UNITS = 12

# Labels for the per-purpose random streams derived from the master seed.
STREAM_SPLIT, STREAM_INIT, STREAM_TASK, STREAM_GRADCHECK = 1, 2, 3, 4


class CliIOError(Exception):
    pass


class ToleranceFailure(Exception):
    pass


class UsageError(Exception):
    pass


def _dims(text):
    try:
        dims = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive integers, got {text!r}")
    return dims


def _floats(text):
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _stream_seed(seed, stream):
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


# --------------------------------------------------------------------------- data


def _add_data_args(p, prefix="", labels=True):
    dash = f"{prefix}-" if prefix else ""
    p.add_argument(f"--{dash}images", help="IDX image file (optionally .gz)")
    if labels:
        p.add_argument(f"--{dash}labels", help="IDX label file")
    p.add_argument(f"--{dash}csv", help="CSV matrix with a header row, one sample per row")


def _add_common_data_args(p):
    p.add_argument("--label-column", help="CSV column holding class labels")
    p.add_argument("--binarize-threshold", type=float, default=128.0,
                   help="pixels >= threshold become 1 (applied when values exceed 1)")
    p.add_argument("--bits", type=int, help="bit-plane encode integers instead of binarizing")
    p.add_argument("--limit", type=int, help="use only the first N samples")


def _read_source(args, prefix=""):
    key = prefix.replace("-", "_") + "_" if prefix else ""
    images = getattr(args, f"{key}images", None)
    csv_path = getattr(args, f"{key}csv", None)
    label_path = getattr(args, f"{key}labels", None)
    if (images is None) == (csv_path is None):
        flag = f"--{prefix}-" if prefix else "--"
        raise UsageError(f"give exactly one of {flag}images or {flag}csv")
    try:
        if images is not None:
            x = dataio.load_idx(images)
            y = dataio.load_idx(label_path).astype(np.int64) if label_path else None
        else:
            x, y = dataio.load_csv_matrix(csv_path, args.label_column)
    except (OSError, FormatError) as exc:
        raise CliIOError(str(exc)) from exc
    if y is not None and len(y) != len(x):
        raise ValueError(f"{len(x)} samples but {len(y)} labels")
    if args.limit is not None:
        x = x[: args.limit]
        y = None if y is None else y[: args.limit]
    if args.bits:
        x = dataio.bitplane_encode(x, args.bits)
    elif x.size and x.max() > 1:
        x = dataio.binarize(x, args.binarize_threshold)
    return x, y


def _fit_dims(x, dims):
    """Samples reshaped to ``dims`` through the column-major vectorization."""
    if tuple(x.shape[1:]) == tuple(dims):
        return x
    size = math.prod(x.shape[1:])
    if size != math.prod(dims):
        raise ShapeError(f"samples have {size} entries, visible dims {dims} need {math.prod(dims)}")
    return unvec(vec(x, batched=True), dims, batched=True)


def _load_data(args, dims, prefix="", need_labels=False):
    x, y = _read_source(args, prefix)
    if need_labels and y is None:
        raise UsageError("this command needs class labels (--labels or --label-column)")
    return _fit_dims(x, dims), y


# -------------------------------------------------------------------------- model


def _add_model_args(p, required=True):
    p.add_argument("--variant", choices=("rbm", "mvrbm", "mporbm"), default="mporbm")
    p.add_argument("--visible", type=_dims, required=required)
    p.add_argument("--hidden", type=_dims, required=required)
    p.add_argument("--ranks", type=_dims, help="MPO rank vector, e.g. 1,40,1")
    p.add_argument("--init-scale", type=float, default=0.01, help="std of the Gaussian weight init")


def _add_train_args(p):
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--cd-steps", type=int, default=1)
    p.add_argument("--algorithm", choices=("cd-aop", "cd-su"), default="cd-aop")
    p.add_argument("--bias-outside-loop", action="store_true",
                   help="cd-aop: update biases once per batch instead of with every core")


def _train_config(args, lr=None, grid=()):
    return TrainConfig(
        max_iterations=args.iterations,
        batch_size=args.batch_size,
        momentum=args.momentum,
        learning_rate=args.lr if lr is None else lr,
        cd_steps=args.cd_steps,
        algorithm=args.algorithm,
        seed=args.seed,
        learning_rate_grid=tuple(grid),
        bias_in_core_loop=not args.bias_outside_loop,
    )


def _init_model(args):
    ranks = args.ranks
    if args.variant == "mporbm" and ranks is None:
        ranks = (1,) * (len(args.visible) + 1)
    return model_for(args.variant, args.visible, args.hidden, ranks,
                     scale=args.init_scale, seed=_stream_seed(args.seed, STREAM_INIT))


def _load_model(path):
    try:
        return dataio.load_model(path)
    except (OSError, FormatError, ShapeError) as exc:
        raise CliIOError(f"{path}: {exc}") from exc


def _write(path, data):
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        dataio.atomic_write(path, data)
    except OSError as exc:
        raise CliIOError(f"{path}: {exc}") from exc


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "inf" if math.isinf(x) else repr(float(x))


def _out(args, name):
    return args.out if args.out else os.path.join(args.out_dir, name)


# ----------------------------------------------------------------------- commands


def cmd_train(args):
    m0 = _init_model(args)
    x, y = _load_data(args, m0.visible_dims, need_labels=bool(args.lr_grid or args.val_fraction))
    if args.lr_grid or args.val_fraction:
        frac = args.val_fraction or 0.2
        ds = dataio.split(dataio.LabeledDataset(x, y), (1.0 - frac, frac, 0.0),
                          seed=_stream_seed(args.seed, STREAM_SPLIT))
        tx, ty = ds.part("train")
        vx, vy = ds.part("validation")
        cfg = _train_config(args, grid=args.lr_grid or DEFAULT_LEARNING_RATE_GRID)
        model, log = train(m0, tx, cfg, validation=knn_validation_score(tx, ty, vx, vy))
        for lr, score in log.validation_scores.items():
            print(f"lr={lr!r} validation_accuracy={score!r}")
        print(f"selected lr={log.learning_rate!r}")
    else:
        model, log = train(m0, x, _train_config(args))
    _write(_out(args, "model.tnrbm"), dataio.model_to_bytes(model))
    _write(args.log or os.path.join(args.out_dir, "train_log.csv"), log.to_csv(timing=args.timing))
    if log.rows:
        print(f"final recon_error={log.rows[-1]['recon_error']!r}")
    return EXIT_OK


def cmd_features(args):
    m = _load_model(args.model)
    x, y = _load_data(args, m.visible_dims)
    feats = extract_features(m, x)
    header = ["sample_id"] + (["label"] if y is not None else []) + [f"h{i + 1}" for i in range(feats.shape[1])]
    rows = [
        [i] + ([int(y[i])] if y is not None else []) + [repr(float(v)) for v in f]
        for i, f in enumerate(feats)
    ]
    _write(_out(args, "features.csv"), _csv_text(header, rows))
    return EXIT_OK


def cmd_knn_eval(args):
    m = _load_model(args.model)
    tx, ty = _load_data(args, m.visible_dims, "train", need_labels=True)
    qx, qy = _load_data(args, m.visible_dims, "test", need_labels=True)
    pred = knn_predict(extract_features(m, tx), ty, extract_features(m, qx), k=args.k)
    rows = [[i, int(p), int(t)] for i, (p, t) in enumerate(zip(pred, qy))]
    _write(_out(args, "knn.csv"), _csv_text(["sample_id", "predicted", "label"], rows))
    print(f"classification_error={classification_error(pred, qy)!r}")
    return EXIT_OK


def _image_dims(args, m):
    if args.image_dims:
        dims = args.image_dims
    elif len(m.visible_dims) == 2:
        dims = m.visible_dims
    else:
        raise UsageError("give --image-dims for models whose visible layer is not 2-D")
    if math.prod(dims) != math.prod(m.visible_dims):
        raise ShapeError(f"image dims {dims} do not match visible dims {m.visible_dims}")
    return tuple(dims)


def _write_pgms(args, prefix, images, img_dims):
    for i, img in enumerate(images[: args.pgm_limit]):
        picture = _fit_dims(img[None], img_dims)[0]
        path = os.path.join(args.out_dir, f"{prefix}_{i:05d}.pgm")
        try:
            os.makedirs(args.out_dir, exist_ok=True)
            dataio.write_pgm(path, picture)
        except OSError as exc:
            raise CliIOError(f"{path}: {exc}") from exc


def cmd_complete(args):
    m = _load_model(args.model)
    x, _ = _load_data(args, m.visible_dims)
    img_dims = _image_dims(args, m)
    mask = _fit_dims(half_mask(img_dims, args.given)[None].astype(np.float64), m.visible_dims)[0]
    task = CompletionTask(mask, gibbs_rounds=args.rounds or 100, readout=args.readout)
    out = complete(m, x, task, _rng(args.seed, STREAM_TASK))
    scores = [psnr(a, b) for a, b in zip(x, out)]
    rows = [[i, _fmt(s)] for i, s in enumerate(scores)]
    _write(_out(args, "complete.csv"), _csv_text(["sample_id", "psnr_db"], rows))
    _write_pgms(args, "complete", out, img_dims)
    mean, exact = mean_psnr(scores)
    print(f"mean_psnr_db={_fmt(mean)} exact_reconstructions={exact}")
    return EXIT_OK


def cmd_denoise(args):
    m = _load_model(args.model)
    x, _ = _load_data(args, m.visible_dims)
    img_dims = _image_dims(args, m)
    rng = _rng(args.seed, STREAM_TASK)
    noisy = add_salt_pepper(x, args.noise, rng) if len(x) else x
    out = denoise(m, noisy, rounds=args.rounds or 5, rng=rng)
    rows, scores = [], []
    for i, (ref, nz, dn) in enumerate(zip(x, noisy, out)):
        s = psnr(ref, dn)
        scores.append(s)
        rows.append([i, _fmt(psnr(ref, nz)), _fmt(s)])
    _write(_out(args, "denoise.csv"), _csv_text(["sample_id", "psnr_noisy_db", "psnr_db"], rows))
    _write_pgms(args, "noisy", noisy, img_dims)
    _write_pgms(args, "denoised", out, img_dims)
    mean, exact = mean_psnr(scores)
    print(f"mean_psnr_db={_fmt(mean)} exact_reconstructions={exact}")
    return EXIT_OK


def cmd_rank_sweep(args):
    tx, ty = _load_data(args, args.visible, "train", need_labels=True)
    qx, qy = _load_data(args, args.visible, "test", need_labels=True)
    rows = rank_sweep(tx, ty, qx, qy, args.hidden, args.rank_list, _train_config(args),
                      scale=args.init_scale, seed=_stream_seed(args.seed, STREAM_INIT))
    _write(_out(args, "rank_sweep.csv"), _csv_text(["rank", "classification_error"],
                                                   [[r, repr(e)] for r, e in rows]))
    for r, e in rows:
        print(f"rank={r} classification_error={e!r}")
    return EXIT_OK


def cmd_materialize(args):
    m = _load_model(args.model)
    mat = m.weights() if m.variant == "rbm" else None
    if m.variant == "mvrbm":
        mat = m.to_mporbm().mpo.as_matrix(cap=args.cap)
    elif m.variant == "mporbm":
        mat = m.mpo.as_matrix(cap=args.cap)
    rows = [[repr(float(v)) for v in row] for row in mat]
    header = [f"h{j + 1}" for j in range(mat.shape[1])]
    _write(_out(args, "weights.csv"), _csv_text(header, rows))
    print(f"rows={mat.shape[0]} cols={mat.shape[1]}")
    return EXIT_OK


def cmd_grad_check(args, gradient_fn=None):
    units = math.prod(args.visible) + math.prod(args.hidden)
    if units > GRAD_CHECK_MAX_UNITS:
        raise ValueError(f"grad-check enumerates 2^{units} states; at most {GRAD_CHECK_MAX_UNITS} units allowed")
    m = _init_model(args)
    rng = _rng(args.seed, STREAM_GRADCHECK)
    params = m.params()
    for name in ("B", "C"):
        params[name][...] = rng.normal(scale=args.init_scale, size=params[name].shape)
    if args.images or args.csv:
        data, _ = _load_data(args, m.visible_dims)
    else:
        data = rng.integers(0, 2, size=(args.samples,) + tuple(m.visible_dims)).astype(np.float64)
    rows = gradient_check(m, data, step=args.step, gradient_fn=gradient_fn or exact_gradient)
    worst = 0.0
    for name, rel, absolute in rows:
        worst = max(worst, rel)
        print(f"{name} max_rel_err={rel:.3e} max_abs_err={absolute:.3e}")
    ok = worst <= args.tol
    print(f"{'PASS' if ok else 'FAIL'} max_rel_err={worst:.3e} tol={args.tol:g}")
    if not ok:
        raise ToleranceFailure(f"relative error {worst:.3e} exceeds {args.tol:g}")
    return EXIT_OK


# ------------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="tnrbm", description="Tensor-network restricted Boltzmann machines.")
    parser.add_argument("--config", help="flat key=value file of flag defaults")
    parser.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads (env TNRBM_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--out", help="primary output file (default inside --out-dir)")
        return p

    p = command("train", cmd_train, "train a model; writes a model file and a per-epoch CSV log")
    _add_model_args(p)
    _add_train_args(p)
    _add_data_args(p)
    _add_common_data_args(p)
    p.add_argument("--log", help="train-log CSV path")
    p.add_argument("--lr-grid", type=_floats, default=(),
                   help="select the learning rate by validation 1-NN accuracy")
    p.add_argument("--val-fraction", type=float, help="validation share for --lr-grid (default 0.2)")
    p.add_argument("--timing", action="store_true", help="add a wall-clock column to the log")

    p = command("features", cmd_features, "hidden-layer features as CSV")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    _add_common_data_args(p)

    p = command("knn-eval", cmd_knn_eval, "1-NN classification on hidden features")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=1)
    _add_data_args(p, "train")
    _add_data_args(p, "test")
    _add_common_data_args(p)

    for name, func, help_text in (
        ("complete", cmd_complete, "complete half-observed images by clamped Gibbs sampling"),
        ("denoise", cmd_denoise, "denoise salt-and-pepper corrupted images"),
    ):
        p = command(name, func, help_text)
        p.add_argument("--model", required=True)
        _add_data_args(p, labels=False)
        _add_common_data_args(p)
        p.add_argument("--rounds", type=int, help="Gibbs rounds (default 100 complete, 5 denoise)")
        p.add_argument("--image-dims", type=_dims, help="image shape for masks and PGM output")
        p.add_argument("--pgm-limit", type=int, default=10, help="write PGMs for the first N images")
        if name == "complete":
            p.add_argument("--given", choices=("left", "right", "top", "bottom"), default="left")
            p.add_argument("--readout", choices=("threshold", "sample"), default="threshold")
        else:
            p.add_argument("--noise", type=float, default=0.1)

    p = command("rank-sweep", cmd_rank_sweep, "1-NN test error per MPO rank")
    _add_model_args(p)
    _add_train_args(p)
    p.add_argument("--rank-list", type=_dims, default=(1, 2, 5, 10, 20, 40))
    _add_data_args(p, "train")
    _add_data_args(p, "test")
    _add_common_data_args(p)

    p = command("materialize", cmd_materialize, "dense weight matrix of a model as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--cap", type=int, default=10**7, help="largest matrix size to build")

    p = command("grad-check", cmd_grad_check, "exact gradient vs finite differences on a tiny model")
    _add_model_args(p, required=False)
    p.set_defaults(visible=(2, 2), hidden=(2, 2), ranks=(1, 2, 1), init_scale=0.5)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    _add_data_args(p)
    _add_common_data_args(p)
    return parser


def _read_config(path):
    values = {}
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise CliIOError(f"{path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv, config):
    """Install ``config`` as defaults of the chosen sub-command and parse ``argv``."""
    command = next((a for a in argv if a in _commands(parser)), None)
    if command is None:
        return parser.parse_args(argv)
    subparser = _commands(parser)[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in config.items():
        if key not in actions or key in ("help", "func"):
            parser.error(f"config key {key!r} is not an option of {command}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"config key {key!r}: {exc}")
        else:
            defaults[key] = value
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _commands(parser):
    return next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            args = _apply_config(parser, argv, _read_config(known.config))
        else:
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except CliIOError as exc:
        print(f"tnrbm: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"tnrbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    threads = args.threads or (int(os.environ["TNRBM_THREADS"]) if os.environ.get("TNRBM_THREADS") else None)
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except CliIOError as exc:
        print(f"tnrbm: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UsageError as exc:
        print(f"tnrbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToleranceFailure as exc:
        print(f"tnrbm: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TnrbmError, ValueError, TypeError) as exc:
        print(f"tnrbm: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
