"""Command-line surface: train, encode, eval, query, and the solvers.

One command is one process. Configuration merges three layers, later
wins: built-in defaults (per command), a flat key=value config file
passed with --config, then explicit flags. Every run dumps its
effective configuration next to its artifacts, and re-running from that
dump reproduces them byte for byte.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .alt_solvers import (
    AdshConfig, adsh_train, cnnh_factorize, factorization_error,
)
from .data_cifar import (
    SimilarityOracle, load_cifar10, make_split, make_synthetic_set,
    read_batch_file, read_split_ids, write_split_ids,
)
from .errors import ConfigError, DataError, HashLearnError, NumericError
from .retrieval import (
    binarize_and_pack, load_codes, mean_average_precision, precision_at,
    radius_recall, rank_database, save_codes,
)
from .shadow_optimizer import (
    TrainConfig, sign_pm, smoothed_violations, train, train_pairwise,
    write_loss_trace,
)
from .tensor_nn import (
    forward_in_batches, hash_net, load_checkpoint, save_checkpoint,
)

#: images in the built-in synthetic set per split preset
SYNTHETIC_SIZE = {"desk": 6000, "full": 60000}
#: preset -> (n_query, n_train, n_db or None for the whole remainder)
PRESETS = {"desk": (200, 1000, 5000), "full": (1000, 5000, None)}
SYNTHETIC_SEED = 20240502

METHODS = ("srh", "dsh", "cauchy", "adsh", "cnnh")


@dataclass
class RunConfig:
    """Effective settings of one run; dumped as flat key=value text."""

    method: str = "srh"
    k: int = 12
    alpha: float = 0.01
    beta: float = 0.01
    gamma: float = 1.0
    margin: float | None = None
    epochs: int = 150
    batch: int = 160
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.004
    seed: int = 0
    data: str | None = None
    which: str = "train"
    preset: str = "desk"
    alternations: int = 5
    sweeps: int = 8
    queries: int = 200
    limit: int = 200

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, "
                              f"expected one of {', '.join(METHODS)}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.which not in ("train", "test"):
            raise ConfigError(f"which must be train or test, "
                              f"got {self.which!r}")


def _coerce(name, text):
    """Parse one key=value entry using the RunConfig field types."""
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = kinds[name]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("float"):  # optional float
            return None if text == "" else float(text)
        if kind.startswith("str | None"):
            return None if text == "" else text
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, "
                              f"got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _coerce(key.strip(), value.strip())
    return values


def write_config_file(path, cfg):
    lines = []
    for name, value in asdict(cfg).items():
        lines.append(f"{name}={'' if value is None else value}\n")
    Path(path).write_text("".join(lines))


def build_config(args, defaults=None):
    """defaults < config file < explicit flags."""
    merged = {}
    if defaults:
        merged.update(defaults)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    known = {f.name for f in fields(RunConfig)}
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            merged[name] = flag
    cfg = RunConfig(**merged)
    ratio = getattr(args, "alpha_over_beta", None)
    if ratio is not None:
        if getattr(args, "alpha", None) is not None:
            raise ConfigError("give either --alpha or --alpha-over-beta, "
                              "not both")
        cfg.alpha = ratio * cfg.beta
    return cfg


def load_dataset(cfg):
    root = cfg.data if cfg.data is not None \
        else os.environ.get("HASHLEARN_CIFAR10")
    if root:
        return load_cifar10(Path(root), cfg.which)
    return make_synthetic_set(SYNTHETIC_SIZE[cfg.preset],
                              seed=SYNTHETIC_SEED)


def split_dataset(dataset, cfg):
    n_query, n_train, n_db = PRESETS[cfg.preset]
    return make_split(dataset, n_query=n_query, n_train=n_train,
                      seed=cfg.seed, n_db=n_db)


def _write_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def _read_labels(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(f"cannot read labels: {e}") from None
    try:
        return np.array([int(tok) for tok in text.split()], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: malformed label list ({e})") from None


def _encode_images(net, images, batch):
    return binarize_and_pack(forward_in_batches(net, images, batch))


def _checkpoint_bits(state, path):
    if "fc2.w" not in state:
        raise DataError(f"{path}: checkpoint lacks the code head fc2.w")
    return int(state["fc2.w"].shape[1])


def _load_net(path):
    state = load_checkpoint(path)
    net = hash_net(_checkpoint_bits(state, path))
    net.load_state(state)
    return net


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = build_config(args)
    if cfg.method not in ("srh", "dsh", "cauchy"):
        raise ConfigError(f"train handles srh, dsh, cauchy; use the "
                          f"dedicated subcommand for {cfg.method}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg)
    split = split_dataset(dataset, cfg)
    train_set = dataset.take(split.train_ids)
    oracle = SimilarityOracle(train_set.labels)
    tc = TrainConfig(bits=cfg.k, alpha=cfg.alpha, beta=cfg.beta,
                     margin=cfg.margin, epochs=cfg.epochs,
                     batch_size=cfg.batch, lr=cfg.lr,
                     momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                     seed=cfg.seed, gamma=cfg.gamma)

    def show(row):
        print(f"epoch {row.epoch}/{cfg.epochs} loss={row.mean_loss:.4f} "
              f"pair={row.pair_term:.4f} shadow={row.shadow_term:.4f} "
              f"norm={row.norm_term:.4f}")

    if cfg.method == "srh":
        result = train(train_set, oracle, tc, progress=show)
    else:
        result = train_pairwise(train_set, oracle, tc, cfg.method,
                                progress=show)

    # soft check, not fatal: the 5-epoch smoothed loss should fall
    bumps = smoothed_violations([row.mean_loss for row in result.trace])
    if bumps > 2:
        print(f"warning: smoothed loss rose in {bumps} epoch windows",
              file=sys.stderr)

    write_config_file(out / "config.txt", cfg)
    save_checkpoint(out / "checkpoint.hlck", result.net.state())
    write_loss_trace(out / "trace.tsv", result.trace)
    if result.shadow is not None:
        save_codes(out / "shadow_codes.hlpc", binarize_and_pack(result.shadow))
    for name, ids in (("query", split.query_ids), ("db", split.db_ids),
                      ("train", split.train_ids)):
        write_split_ids(out / f"split_{name}.txt", ids)
        subset = dataset.take(ids)
        _write_labels(out / f"{name}_labels.txt", subset.labels)
        save_codes(out / f"{name}_codes.hlpc",
                   _encode_images(result.net, subset.images, cfg.batch))
    return 0


def cmd_encode(args):
    net = _load_net(args.checkpoint)
    bits = net.layers[-1].out_features
    if args.k is not None and args.k != bits:
        raise ConfigError(f"checkpoint emits {bits}-bit codes, "
                          f"but {args.k} were requested")
    cfg = build_config(args)
    dataset = load_dataset(cfg)
    if args.ids is not None:
        dataset = dataset.take(read_split_ids(args.ids))
    codes = _encode_images(net, dataset.images, cfg.batch)
    save_codes(args.out, codes)
    print(f"encoded={codes.n}")
    return 0


def _check_label_cover(codes, labels, what):
    if len(labels) < codes.n:
        missing = ", ".join(str(i) for i in range(len(labels),
                                                  min(codes.n,
                                                      len(labels) + 20)))
        more = "..." if codes.n - len(labels) > 20 else ""
        raise DataError(f"{what}: no label for ids {missing}{more}")
    if len(labels) > codes.n:
        raise DataError(f"{what}: {len(labels)} labels for "
                        f"{codes.n} codes")


def cmd_eval(args):
    q = load_codes(args.query_codes)
    d = load_codes(args.db_codes)
    if q.k != d.k:
        raise DataError(f"code width mismatch: queries {q.k} bits, "
                        f"database {d.k}")
    if args.map_at is not None and args.map_at < 1:
        raise ConfigError(f"--map-at must be >= 1, got {args.map_at}")
    if args.precision_at is not None and args.precision_at < 1:
        raise ConfigError(f"--precision-at must be >= 1, "
                          f"got {args.precision_at}")
    if args.radius is not None and not 0 <= args.radius <= q.k:
        raise ConfigError(f"--radius must be in [0, {q.k}], "
                          f"got {args.radius}")
    qlab = _read_labels(args.query_labels)
    dlab = _read_labels(args.db_labels)
    _check_label_cover(q, qlab, "query set")
    _check_label_cover(d, dlab, "database")
    oracle = SimilarityOracle(qlab, dlab)
    rankings = [rank_database(q.row(i), d, query_id=i)
                for i in range(q.n)]
    score = mean_average_precision(rankings, oracle, at=args.map_at)
    print(f"map={score.value:.4f}")
    print(f"queries={q.n}")
    print(f"skipped_queries={score.skipped}")
    if args.precision_at is not None:
        p = precision_at(rankings, oracle, args.precision_at)
        print(f"precision_at_{args.precision_at}={p:.4f}")
    if args.radius is not None:
        rec = radius_recall(rankings, oracle, args.radius)
        print(f"radius_{args.radius}_recall={rec:.4f}")
    return 0


def _query_code(args, k):
    sources = [s for s in (args.bits, args.code_index, args.record)
               if s is not None]
    if len(sources) != 1:
        raise ConfigError("give exactly one of --bits, --code-index "
                          "(with --query-codes), --record (with "
                          "--checkpoint)")
    if args.bits is not None:
        if len(args.bits) != k or set(args.bits) - {"0", "1"}:
            raise ConfigError(f"--bits needs {k} characters of 0/1, "
                              f"got {args.bits!r}")
        signs = np.array([[1.0 if ch == "1" else -1.0
                           for ch in args.bits]])
        return binarize_and_pack(signs)
    if args.code_index is not None:
        if args.query_codes is None:
            raise ConfigError("--code-index needs --query-codes")
        codes = load_codes(args.query_codes)
        if not 0 <= args.code_index < codes.n:
            raise ConfigError(f"--code-index {args.code_index} out of "
                              f"range for {codes.n} codes")
        return codes.row(args.code_index)
    if args.checkpoint is None:
        raise ConfigError("--record needs --checkpoint")
    images, _ = read_batch_file(args.record)
    if len(images) == 0:
        raise DataError(f"{args.record}: no records to encode")
    net = _load_net(args.checkpoint)
    return _encode_images(net, images[:1].astype(np.float32) / 255.0, 1)


def cmd_query(args):
    db = load_codes(args.db_codes)
    code = _query_code(args, db.k)
    if code.k != db.k:
        raise DataError(f"query code has {code.k} bits, database "
                        f"has {db.k}")
    result = rank_database(code, db, top=args.top)
    for db_id, dist in result:
        print(f"{db_id}\t{dist}")
    return 0


def cmd_factorize_cnnh(args):
    cfg = build_config(args, defaults={"method": "cnnh"})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg)
    if cfg.limit > len(dataset):
        raise ConfigError(f"limit {cfg.limit} exceeds dataset size "
                          f"{len(dataset)}")
    rng = np.random.default_rng(cfg.seed)
    ids = np.sort(rng.choice(len(dataset), size=cfg.limit, replace=False))
    labels = dataset.labels[ids]
    S = SimilarityOracle(labels).s(np.arange(cfg.limit)).astype(np.float64)
    H = cnnh_factorize(S, q=cfg.k, sweeps=cfg.sweeps, seed=cfg.seed)
    write_config_file(out / "config.txt", cfg)
    write_split_ids(out / "factorized_ids.txt", ids)
    _write_labels(out / "factorized_labels.txt", labels)
    save_codes(out / "factorized_codes.hlpc", binarize_and_pack(H))
    print(f"relaxed_error={factorization_error(S, H, cfg.k):.4f}")
    print(f"binary_error={factorization_error(S, sign_pm(H), cfg.k):.4f}")
    return 0


def cmd_solve_adsh(args):
    cfg = build_config(args, defaults={"method": "adsh", "gamma": 200.0,
                                       "epochs": 3, "batch": 32})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg)
    split = split_dataset(dataset, cfg)
    db_set = dataset.take(split.db_ids)
    if cfg.queries > len(db_set):
        raise ConfigError(f"cannot sample {cfg.queries} queries from a "
                          f"database of {len(db_set)}")
    rng = np.random.default_rng(cfg.seed)
    query_rows = np.sort(rng.choice(len(db_set), size=cfg.queries,
                                    replace=False))
    acfg = AdshConfig(bits=cfg.k, gamma=cfg.gamma,
                      alternations=cfg.alternations, epochs=cfg.epochs,
                      batch_size=cfg.batch, lr=cfg.lr,
                      momentum=cfg.momentum,
                      weight_decay=cfg.weight_decay, seed=cfg.seed)
    result = adsh_train(db_set.take(query_rows), db_set.labels, acfg,
                        query_rows=query_rows)
    for row in result.trace:
        print(f"alternation {row.alternation}/{cfg.alternations} "
              f"after_net={row.after_net:.4f} "
              f"after_codes={row.after_codes:.4f}")
    write_config_file(out / "config.txt", cfg)
    save_checkpoint(out / "checkpoint.hlck", result.net.state())
    save_codes(out / "db_codes.hlpc", binarize_and_pack(result.V))
    write_split_ids(out / "query_rows.txt", query_rows)
    _write_labels(out / "db_labels.txt", db_set.labels)
    trace_lines = [f"{r.alternation}\t{r.after_net:.10g}"
                   f"\t{r.after_codes:.10g}\n" for r in result.trace]
    (out / "objective_trace.tsv").write_text("".join(trace_lines))
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse exits usage errors with status 2; the contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(p, with_training=True):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="directory of CIFAR-style batch files "
                                  "(default: built-in synthetic set)")
    p.add_argument("--which", choices=("train", "test"))
    p.add_argument("--preset", choices=tuple(PRESETS))
    if with_training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)


def make_parser():
    parser = _Parser(prog="hashlearn",
                     description="deep supervised hashing toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("train", help="train a hashing network")
    _add_config_flags(p)
    p.add_argument("--method", choices=("srh", "dsh", "cauchy"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--alpha-over-beta", dest="alpha_over_beta", type=float,
                   help="set alpha as this multiple of beta")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("encode", help="images to packed codes")
    _add_config_flags(p, with_training=False)
    p.add_argument("--batch", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ids", help="file of dataset row ids to encode")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_encode)

    p = sub.add_parser("eval", help="retrieval metrics from code files")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--map-at", dest="map_at", type=int)
    p.add_argument("--precision-at", dest="precision_at", type=int)
    p.add_argument("--radius", type=int)
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("query", help="rank a database against one code")
    p.add_argument("--db-codes", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--bits", help="query code as a 0/1 string")
    p.add_argument("--query-codes", help="codes file for --code-index")
    p.add_argument("--code-index", dest="code_index", type=int)
    p.add_argument("--record", help="3073-byte image record to encode")
    p.add_argument("--checkpoint")
    p.set_defaults(run=cmd_query)

    p = sub.add_parser("factorize-cnnh",
                       help="fit codes to a label similarity matrix")
    _add_config_flags(p, with_training=False)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--limit", type=int,
                   help="how many items to factorize")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_factorize_cnnh)

    p = sub.add_parser("solve-adsh",
                       help="alternate network and database codes")
    _add_config_flags(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alternations", type=int)
    p.add_argument("--queries", type=int,
                   help="query sample size drawn from the database")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_solve_adsh)

    return parser


EXIT_CODES = ((ConfigError, 1), (DataError, 2), (NumericError, 3))


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse already printed the reason
        return int(e.code or 0)
    try:
        return args.run(args)
    except HashLearnError as e:
        for kind, code in EXIT_CODES:
            if isinstance(e, kind):
                print(f"error: {e}", file=sys.stderr)
                return code
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
