"""Command-line entry point: ``textrec <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from threadpoolctl import threadpool_limits

from .container import ContainerError
from .data import DataError, ProfileSet, load_data_dir, write_interactions, write_jsonl
from .encoder import PRESETS, Encoder, EncoderConfig
from .tokenizer import Vocab, build_vocab

log = logging.getLogger("textrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- run config

def _train_fields() -> set[str]:
    from .training import TrainConfig
    return {f.name for f in dataclasses.fields(TrainConfig)}


def _cf_fields() -> set[str]:
    from .cf import CFConfig
    return {f.name for f in dataclasses.fields(CFConfig)}


_ENCODER_FIELDS = {f.name for f in dataclasses.fields(EncoderConfig)} - {"vocab_size", "max_len"}


@dataclass
class RunConfig:
    data: str | None = None
    out: str | None = None
    seed: int = 0
    preset: str | None = "tiny"
    encoder: dict[str, Any] = field(default_factory=dict)
    max_len: int = 64
    vocab: str | None = None
    vocab_size: int = 30000
    ratios: list[float] = field(default_factory=lambda: [8, 1, 1])
    min_rating: float | None = None
    kcore: int | None = None
    train: dict[str, Any] = field(default_factory=dict)
    cf: dict[str, Any] = field(default_factory=dict)
    eval_t: int = 3
    workers: int = 1

    def __post_init__(self) -> None:
        if self.preset is not None and self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.preset is None and not {"layers", "hidden", "heads"} <= set(self.encoder):
            raise UsageError("without a preset the encoder section needs layers, hidden and heads")
        for section, allowed in (("encoder", _ENCODER_FIELDS), ("train", _train_fields()), ("cf", _cf_fields())):
            unknown = set(getattr(self, section)) - allowed
            if unknown:
                raise UsageError(f"unknown keys in config section {section!r}: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - allowed
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        if self.preset is not None:
            return EncoderConfig.from_preset(self.preset, vocab_size, self.max_len, **self.encoder)
        return EncoderConfig(vocab_size=vocab_size, max_len=self.max_len, **self.encoder)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, config: dict) -> dict:
    """Record the config hash and the checksum of every file under ``out_dir``."""
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_sha256": hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest(),
        "files": [{"path": p.relative_to(out_dir).as_posix(), "sha256": sha256_file(p)} for p in files],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _out_dir(path: str | None) -> Path:
    if not path:
        raise UsageError("an output directory is required (--out)")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _all_texts(corpus) -> list[str]:
    return [p for sets in (corpus.item_profiles, corpus.user_profiles) for ps in sets.values() for p in ps.profiles]


# ---------------------------------------------------------------- subcommands

def cmd_prepare(args) -> int:
    out = _out_dir(args.out)
    seed = 0 if args.seed is None else args.seed
    if args.synthetic:
        from .synthetic import SyntheticSpec, generate, write_synthetic
        spec = SyntheticSpec(topics=args.topics, users_per_topic=args.users_per_topic,
                             items_per_topic=args.items_per_topic, words_per_topic=args.words_per_topic,
                             interactions_per_user=args.interactions_per_user, noise=args.noise, seed=seed,
                             diversified=args.diversified, ratios=tuple(args.ratios), popularity=args.popularity)
        write_synthetic(generate(spec), out)
        config = {"synthetic": dataclasses.asdict(spec)}
    else:
        if not args.data:
            raise UsageError("prepare needs --data or --synthetic")
        corpus = load_data_dir(args.data, args.ratios, seed, args.min_rating, args.kcore)
        ds = corpus.dataset
        write_jsonl(out / "items.jsonl", ({"item_id": r.item_id, "title": r.title, "category": r.category,
                                           "description": r.description, "reviews": [list(x) for x in r.reviews],
                                           **({"profiles": corpus.item_profiles[r.item_id].profiles}
                                              if r.item_id in corpus.item_profiles else {})}
                                          for r in corpus.items))
        write_jsonl(out / "users.jsonl", ({"user_id": u, **({"profiles": corpus.user_profiles[u].profiles}
                                                             if u in corpus.user_profiles else {})}
                                          for u in ds.users))
        for name in ("train", "val", "test"):
            write_interactions(out / f"{name}.tsv", ds.splits[name])
        config = {"data": str(args.data), "ratios": args.ratios, "seed": seed,
                  "min_rating": args.min_rating, "kcore": args.kcore}
    write_manifest(out, config)
    return EXIT_OK


def cmd_vocab(args) -> int:
    corpus = load_data_dir(args.data)
    vocab = build_vocab(_all_texts(corpus), args.size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(json.dumps({"vocab_size": len(vocab), "path": str(out)}))
    return EXIT_OK


def _resolve_train_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    doc = cfg.to_dict()
    for key in ("data", "out", "seed", "preset", "max_len", "vocab", "vocab_size", "workers", "eval_t"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    train = dict(doc["train"])
    for key in ("lr", "max_steps", "epochs", "batch_size", "objective", "profile_t", "eval_interval", "tau",
                "mlm_weight"):
        val = getattr(args, key, None)
        if val is not None:
            train[key] = val
    train.setdefault("seed", doc["seed"])
    if args.seed is not None:
        train["seed"] = args.seed
    doc["train"] = train
    return RunConfig.from_dict(doc)


def cmd_train(args) -> int:
    from .evaluation import evaluate_multi_profile
    from .training import TrainConfig, train

    cfg = _resolve_train_config(args)
    if not cfg.data:
        raise UsageError("train needs a data directory (--data or config 'data')")
    out = _out_dir(cfg.out)
    corpus = load_data_dir(cfg.data, cfg.ratios, cfg.seed, cfg.min_rating, cfg.kcore)
    vocab = Vocab.load(cfg.vocab) if cfg.vocab else build_vocab(_all_texts(corpus), cfg.vocab_size)
    tcfg = TrainConfig(**cfg.train)
    enc = Encoder.create(cfg.encoder_config(len(vocab)), cfg.seed, vocab)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        result = train(tcfg, corpus.dataset, corpus.user_profiles, corpus.item_profiles, enc,
                       on_report=lambda rep: fh.write(rep.to_json() + "\n"))
    result.best.save(out / "best.ezrc", {"train": tcfg.to_dict()})
    metrics: dict[str, Any] = {"best_step": result.best_step, "val": result.evals,
                               "preset": cfg.preset, "t": tcfg.profile_t}
    if corpus.dataset.test:
        t = min(cfg.eval_t, min(len(ps.profiles) for ps in corpus.user_profiles.values()) - 1,
                min(len(ps.profiles) for ps in corpus.item_profiles.values()) - 1)
        report = evaluate_multi_profile(result.best, corpus.user_profiles, corpus.item_profiles, corpus.dataset,
                                        "test", tcfg.eval_ns, t=max(t, 0))
        metrics["test"] = report.to_dict()
    resolved = cfg.to_dict()
    resolved["train"] = tcfg.to_dict()
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "config.json", resolved)
    write_manifest(out, resolved)
    print(json.dumps(metrics.get("test", {}).get("mean", {}), sort_keys=True))
    return EXIT_OK


def cmd_embed(args) -> int:
    from .retrieval import embed_entities
    enc = Encoder.load(args.checkpoint)
    corpus = load_data_dir(args.data)
    out = _out_dir(args.out)
    kinds = ["user", "item"] if args.kind == "both" else [args.kind]
    for kind in kinds:
        sets = corpus.user_profiles if kind == "user" else corpus.item_profiles
        store = embed_entities(enc, sets, args.profile_index, kind)
        store.save(out / f"{kind}s.ezem")
    write_manifest(out, {"checkpoint_sha256": sha256_file(Path(args.checkpoint)), "kind": args.kind,
                         "profile_index": args.profile_index})
    return EXIT_OK


def cmd_recommend(args) -> int:
    from .retrieval import EmbeddingStore, recommend
    users = EmbeddingStore.load(args.users)
    items = EmbeddingStore.load(args.items)
    excl: dict[str, set[str]] = {}
    if args.data and not args.no_exclude:
        excl = load_data_dir(args.data).dataset.user_neighbors
    for u in args.user or users.ids:
        rl = recommend(u, args.k, users, items, excl.get(u, ()))
        print(json.dumps({"user_id": u, "items": rl.items, "scores": rl.scores}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import MetricsReport, evaluate_all_rank, evaluate_multi_profile
    corpus = load_data_dir(args.data)
    if args.checkpoint:
        enc = Encoder.load(args.checkpoint)
        report = evaluate_multi_profile(enc, corpus.user_profiles, corpus.item_profiles, corpus.dataset,
                                        args.split, args.k, t=args.t)
    else:
        if not (args.users and args.items):
            raise UsageError("evaluate needs --users and --items, or --checkpoint")
        from .retrieval import EmbeddingStore
        res = evaluate_all_rank(EmbeddingStore.load(args.users), EmbeddingStore.load(args.items), corpus.dataset,
                                args.split, args.k, scorer=args.scorer)
        report = MetricsReport.from_rounds(sorted(args.k), [res.mean()])
    print(report.to_json())
    return EXIT_OK


def cmd_train_cf(args) -> int:
    from .cf import CFConfig, train_cf
    from .retrieval import EmbeddingStore
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cf_doc = dict(cfg.cf)
    for key in ("backbone", "dim", "layers", "lr", "epochs", "batch_size", "align_weight", "align_tau"):
        val = getattr(args, key)
        if val is not None:
            cf_doc[key] = val
    cf_doc["seed"] = args.seed if args.seed is not None else cf_doc.get("seed", cfg.seed)
    ccfg = CFConfig(**cf_doc)
    data = args.data or cfg.data
    if not data:
        raise UsageError("train-cf needs --data")
    out = _out_dir(args.out or cfg.out)
    corpus = load_data_dir(data)
    ut = EmbeddingStore.load(args.user_text) if args.user_text else None
    it = EmbeddingStore.load(args.item_text) if args.item_text else None
    if ccfg.align_weight > 0 and (ut is None or it is None):
        raise UsageError("align-weight > 0 needs --user-text and --item-text")
    res = train_cf(corpus.dataset, ccfg, ut, it)
    res.model.save(out / "cf.ezrc")
    metrics = {"best_epoch": res.best_epoch, "val": res.val, "test": res.test.to_dict() if res.test else None}
    write_jsonl(out / "train_log.jsonl", res.history)
    _write_json(out / "metrics.json", metrics)
    resolved = {"data": str(data), "cf": {k: list(v) if isinstance(v, tuple) else v
                                          for k, v in dataclasses.asdict(ccfg).items()},
                "user_text": sha256_file(Path(args.user_text)) if args.user_text else None,
                "item_text": sha256_file(Path(args.item_text)) if args.item_text else None}
    _write_json(out / "config.json", resolved)
    write_manifest(out, resolved)
    print(json.dumps(res.test.mean if res.test else res.val, sort_keys=True))
    return EXIT_OK


def cmd_diversify(args) -> int:
    from .data import read_jsonl
    from .profile_llm import LlmClientConfig, diversify, make_client
    if (args.endpoint is None) == (args.mock is None):
        raise UsageError("give exactly one of --endpoint or --mock")
    client_cfg = LlmClientConfig(endpoint=args.endpoint, model=args.model, token_env=args.token_env,
                                 timeout=args.timeout, max_retries=args.max_retries, mock_transcript=args.mock,
                                 mock_fallback="echo" if args.mock_echo else "error")
    id_key = f"{args.kind}_id"
    records = read_jsonl(Path(args.input), id_key)
    sets = {}
    for rec in records:
        if not rec.get("profiles"):
            raise DataError(f"{args.input}: {rec[id_key]!r} has no profile to diversify")
        sets[rec[id_key]] = ProfileSet(rec[id_key], list(rec["profiles"]))
    res = diversify(sets, args.t, make_client(client_cfg), args.kind, args.progress, args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, ({**rec, "profiles": res.profiles[rec[id_key]].profiles} for rec in records))
    print(json.dumps({"entities": len(records), "calls": res.calls, "flagged": sorted(res.flagged)}))
    return EXIT_OK if not res.flagged else EXIT_DATA


def demo_shift(encoder: Encoder, before: str, after: str, items, k: int) -> dict:
    """Rank the item store for two versions of one user profile with a frozen encoder."""
    from .retrieval import encode_texts, recommend_vector
    vecs = encode_texts(encoder, [before, after])
    lists = [recommend_vector(v, k, items) for v in vecs]
    overlap = [i for i in lists[0].items if i in set(lists[1].items)]
    return {"before": {"items": lists[0].items, "scores": lists[0].scores},
            "after": {"items": lists[1].items, "scores": lists[1].scores},
            "overlap": len(overlap), "overlap_items": overlap}


def cmd_demo_shift(args) -> int:
    from .retrieval import EmbeddingStore
    enc = Encoder.load(args.checkpoint)
    before = Path(args.user_profile_before).read_text(encoding="utf-8").strip()
    after = Path(args.after).read_text(encoding="utf-8").strip()
    print(json.dumps(demo_shift(enc, before, after, EmbeddingStore.load(args.items), args.k), sort_keys=True))
    return EXIT_OK


def report_scaling(runs: Sequence[dict]) -> str:
    """Tab-separated (preset, t, recall@10, ndcg@10) rows from run metrics documents."""
    header = ["preset", "t", "recall@10", "ndcg@10"]
    rows = ["\t".join(header)]
    keys = None
    for run in runs:
        mean = run["test"]["mean"]
        if keys is None:
            keys = set(mean)
        elif set(mean) != keys:
            raise DataError(f"metric keys differ between runs: {sorted(keys)} vs {sorted(mean)}")
        for k in header[2:]:
            if k not in mean:
                raise DataError(f"run metrics lack {k}")
        rows.append("\t".join([str(run.get("preset")), str(run.get("t")), repr(mean["recall@10"]),
                               repr(mean["ndcg@10"])]))
    return "\n".join(rows) + "\n"


def cmd_report_scaling(args) -> int:
    runs = []
    for r in args.runs:
        p = Path(r)
        p = p / "metrics.json" if p.is_dir() else p
        doc = json.loads(p.read_text(encoding="utf-8"))
        if "test" not in doc or not doc["test"]:
            raise DataError(f"{p} has no test metrics")
        runs.append(doc)
    sys.stdout.write(report_scaling(runs))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="textrec", description="Text-profile recommendation pipeline.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1, help="cap on threads and concurrent requests")

    sp = sub.add_parser("prepare", help="filter and split raw data, or generate a synthetic corpus")
    sp.add_argument("--data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ratios", type=_floats, default=[8.0, 1.0, 1.0])
    sp.add_argument("--min-rating", type=float, default=None)
    sp.add_argument("--kcore", type=int, default=None)
    sp.add_argument("--synthetic", action="store_true")
    sp.add_argument("--topics", type=int, default=16)
    sp.add_argument("--users-per-topic", type=int, default=40)
    sp.add_argument("--items-per-topic", type=int, default=30)
    sp.add_argument("--words-per-topic", type=int, default=24)
    sp.add_argument("--interactions-per-user", type=int, default=10)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--diversified", type=int, default=3)
    sp.add_argument("--popularity", choices=["uniform", "power"], default="uniform")
    common(sp)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("vocab", help="build a vocabulary file from all profiles")
    sp.add_argument("--data", required=True)
    sp.add_argument("--size", type=int, default=30000)
    sp.add_argument("--out", required=True)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_vocab)

    sp = sub.add_parser("train", help="train the profile encoder")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--max-len", type=int)
    sp.add_argument("--vocab")
    sp.add_argument("--vocab-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--mlm-weight", type=float)
    sp.add_argument("--max-steps", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--objective", choices=["contrastive-paper", "contrastive-standard", "bpr"])
    sp.add_argument("--profile-t", type=int)
    sp.add_argument("--eval-interval", type=int)
    sp.add_argument("--eval-t", type=int)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("embed", help="encode user and/or item profiles into embedding stores")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--kind", choices=["user", "item", "both"], default="both")
    sp.add_argument("--profile-index", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("recommend", help="top-k items per user from embedding stores")
    sp.add_argument("--users", required=True)
    sp.add_argument("--items", required=True)
    sp.add_argument("--user", action="append")
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--data", help="exclude each user's train items")
    sp.add_argument("--no-exclude", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_recommend)

    sp = sub.add_parser("evaluate", help="all-rank Recall/NDCG")
    sp.add_argument("--users")
    sp.add_argument("--items")
    sp.add_argument("--checkpoint")
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", choices=["val", "test"], default="test")
    sp.add_argument("--k", type=_ints, default=[10, 20])
    sp.add_argument("--scorer", choices=["cosine", "dot"], default="cosine")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("train-cf", help="train LightGCN/GCCF, optionally aligned to text embeddings")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--backbone", choices=["lightgcn", "gccf"])
    sp.add_argument("--dim", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--align-weight", type=float)
    sp.add_argument("--align-tau", type=float)
    sp.add_argument("--user-text")
    sp.add_argument("--item-text")
    common(sp)
    sp.set_defaults(func=cmd_train_cf)

    sp = sub.add_parser("diversify", help="iteratively rephrase profiles with a chat-completion model")
    sp.add_argument("--input", required=True, help="users.jsonl or items.jsonl")
    sp.add_argument("--kind", choices=["user", "item"], required=True)
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--out", required=True)
    sp.add_argument("--progress")
    sp.add_argument("--endpoint")
    sp.add_argument("--mock")
    sp.add_argument("--mock-echo", action="store_true")
    sp.add_argument("--model", default="gpt-3.5-turbo")
    sp.add_argument("--token-env", default="OPENAI_API_KEY")
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.add_argument("--max-retries", type=int, default=3)
    common(sp)
    sp.set_defaults(func=cmd_diversify)

    sp = sub.add_parser("demo-shift", help="compare recommendations before and after editing a user profile")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--user-profile-before", required=True)
    sp.add_argument("--after", required=True)
    sp.add_argument("--items", required=True)
    sp.add_argument("--k", type=int, default=5)
    common(sp)
    sp.set_defaults(func=cmd_demo_shift)

    sp = sub.add_parser("report-scaling", help="TSV of Recall@10/NDCG@10 across runs")
    sp.add_argument("runs", nargs="+", help="run directories or metrics.json files")
    sp.set_defaults(func=cmd_report_scaling, workers=1)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "workers", 1) < 1:
        print("textrec: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    from .training import TrainingDiverged
    try:
        with threadpool_limits(limits=args.workers):
            return args.func(args)
    except UsageError as exc:
        print(f"textrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"textrec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContainerError, FileNotFoundError, KeyError, IndexError, ValueError) as exc:
        print(f"textrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
