"""Command line entry point: one subcommand per pipeline step plus ``pipeline``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import (INIT_METHODS, InitMethod, TeacherLogitsFile, TrainPlan, distill_finetune,
                    first_step_loss, full_finetune, init_target_params, perplexity_stats,
                    teacher_from_params, two_stage_finetune)
from .align import (AlignmentMap, GloveSegmentEmbedder, align_vocabs, bleu1, convert_stream,
                    overlap_ratio, read_segment_embeddings, semantic_score,
                    semantic_score_from_vectors, shared_tokens, write_summary)
from .cooccurrence import DEFAULT_WINDOW, CoocTable, count_cooc_sharded
from .embedding import EmbeddingMatrix
from .glove import GloveConfig, train_glove
from .synthetic import bilingual_corpus
from .tokenizer import TokenStream, compression_rate, load_tokenizer, train_bpe
from .toylm import LmConfig, LmParams, init_params

log = logging.getLogger("vocalign")

THREADS_ENV = "VOCALIGN_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageFailed(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def env_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def stage_seed(root: int, name: str) -> int:
    """Independent, stable seed for a named stage derived from the root seed."""
    digest = hashlib.sha256(f"{root}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_lines(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_loss_csv(path: str | Path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "stage", "nll", "kl"])
        for r in history:
            w.writerow([r.step, r.stage, repr(float(r.nll)), repr(float(r.kl))])


# -- run configuration --------------------------------------------------------

@dataclasses.dataclass
class SourceLmSpec:
    d_model: int = 64
    n_layers: int = 2
    context: int = 64
    steps: int = 300
    lr: float = 3e-3
    batch_tokens: int = 512


@dataclasses.dataclass
class RunConfig:
    corpus: str
    source_vocab: str
    source_merges: str
    target_vocab: str
    target_merges: str
    out_dir: str
    source_model: str | None = None
    eval_corpus: str | None = None
    window: int = DEFAULT_WINDOW
    glove: GloveConfig = dataclasses.field(default_factory=GloveConfig)
    align_mode: str = "direct"
    anchors: int = 300
    init_method: str = "aligned"
    plan: TrainPlan = dataclasses.field(default_factory=lambda: TrainPlan(total_steps=100))
    source_lm: SourceLmSpec = dataclasses.field(default_factory=SourceLmSpec)
    eval_bleu1: bool = True
    eval_semantic: bool = True
    eval_compression: bool = True
    eval_ppl: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "glove" in d:
            d["glove"] = GloveConfig(**d["glove"])
        if "plan" in d:
            d["plan"] = TrainPlan(**d["plan"])
        if "source_lm" in d:
            d["source_lm"] = SourceLmSpec(**d["source_lm"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise UsageError(f"bad run config: {exc}") from None
        if base_dir is not None:
            for name in ("corpus", "source_vocab", "source_merges", "target_vocab",
                         "target_merges", "out_dir", "source_model", "eval_corpus"):
                v = getattr(cfg, name)
                if v is not None and not Path(v).is_absolute():
                    setattr(cfg, name, str(base_dir / v))
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        """Fail before any work if inputs are missing or settings inconsistent."""
        required = ["corpus", "source_vocab", "source_merges", "target_vocab", "target_merges"]
        missing = [f"{n}={getattr(self, n)}" for n in required if not Path(getattr(self, n)).is_file()]
        if self.eval_corpus is not None and not Path(self.eval_corpus).is_file():
            missing.append(f"eval_corpus={self.eval_corpus}")
        if self.source_model is not None and not (Path(self.source_model) / "manifest.json").is_file():
            missing.append(f"source_model={self.source_model}")
        if missing:
            raise FileNotFoundError("missing input files: " + ", ".join(missing))
        if self.align_mode not in ("direct", "relative"):
            raise UsageError(f"align_mode must be 'direct' or 'relative', got {self.align_mode!r}")
        if self.init_method not in INIT_METHODS:
            raise UsageError(f"init_method must be one of {INIT_METHODS}")
        if self.window < 1:
            raise UsageError("window must be >= 1")


def _override(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.method is not None:
        cfg.init_method = args.method
    if args.mode is not None:
        cfg.align_mode = args.mode
    if args.anchors is not None:
        cfg.anchors = args.anchors
    if args.source_model is not None:
        cfg.source_model = args.source_model
    glove = {}
    if args.dim is not None:
        glove["dim"] = args.dim
    if args.iterations is not None:
        glove["iterations"] = args.iterations
    if glove:
        cfg.glove = dataclasses.replace(cfg.glove, **glove)
    if args.steps is not None:
        cfg.plan = dataclasses.replace(cfg.plan, total_steps=args.steps,
                                       stage_boundary=args.steps // 2)
    return cfg


# -- pipeline -----------------------------------------------------------------

class Run:
    """Stage bookkeeping: artifacts, input hashes and provenance-tagged metrics."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.metrics: list[dict] = []
        self.stages: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def rel(self, p: str | Path) -> str:
        p = Path(p)
        try:
            return str(p.relative_to(self.out))
        except ValueError:
            return p.name

    def hashes(self, *paths) -> dict[str, str]:
        out = {}
        for p in paths:
            p = Path(p)
            if p.is_dir():
                for f in sorted(p.iterdir()):
                    out[self.rel(f)] = sha256_file(f)
            else:
                out[self.rel(p)] = sha256_file(p)
        return out

    def record(self, name: str, value, stage: str, inputs: dict[str, str], seed: int | None = None):
        self.metrics.append({"name": name, "value": value, "stage": stage,
                             "inputs": inputs, "seed": seed})

    def stage(self, name: str):
        run = self

        class _Ctx:
            def __enter__(self):
                log.info("stage %s", name)
                return self

            def __exit__(self, exc_type, exc, tb):
                if exc is None:
                    run.stages.append(name)
                    return False
                if isinstance(exc, (StageFailed, KeyboardInterrupt)):
                    return False
                raise StageFailed(name, exc) from exc

        return _Ctx()

    def write_metrics(self):
        _dump_json(self.path("metrics.json"), {
            "version": __version__,
            "root_seed": self.cfg.seed,
            "completed_stages": self.stages,
            "metrics": self.metrics,
        })


def run_pipeline(cfg: RunConfig) -> Path:
    cfg.validate()
    run = Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    _dump_json(run.path("config.json"), cfg.to_dict())
    threads = env_threads()
    try:
        _pipeline_stages(run, threads)
    finally:
        run.write_metrics()
    return run.out


def _pipeline_stages(run: Run, threads: int) -> None:
    cfg = run.cfg
    with run.stage("tokenize"):
        tok_s = load_tokenizer(cfg.source_vocab, cfg.source_merges)
        tok_t = load_tokenizer(cfg.target_vocab, cfg.target_merges)
        lines = read_lines(cfg.corpus)
        stream_s = tok_s.encode_lines(lines)
        stream_t = tok_t.encode_lines(lines)
        if len(stream_s) == 0 or len(stream_t) == 0:
            raise ValueError("corpus produced no tokens")
        stream_s.save(run.path("source.tks"))
        stream_t.save(run.path("target.tks"))
        corpus_hash = {Path(cfg.corpus).name: sha256_file(cfg.corpus)}
        tok_hash = {role: sha256_file(getattr(cfg, role)) for role in
                    ("source_vocab", "source_merges", "target_vocab", "target_merges")}

    with run.stage("count"):
        tables = {}
        for side, stream, tok in (("source", stream_s, tok_s), ("target", stream_t, tok_t)):
            t = count_cooc_sharded(stream, cfg.window, len(tok), n_shards=threads)
            t.save(run.path(f"cooc_{side}.coc"))
            tables[side] = t

    with run.stage("glove"):
        embs = {}
        freqs = {}
        for side, stream, tok in (("source", stream_s, tok_s), ("target", stream_t, tok_t)):
            seed = stage_seed(cfg.seed, f"glove_{side}")
            gcfg = dataclasses.replace(cfg.glove, seed=seed, threads=threads)
            freqs[side] = np.bincount(stream.ids, minlength=len(tok))
            emb = train_glove(tables[side], gcfg, counts=freqs[side])
            emb.save(run.path(f"glove_{side}.emb"))
            embs[side] = emb

    with run.stage("align"):
        shared = shared_tokens(tok_s, tok_t)
        m = align_vocabs(embs["source"], embs["target"], shared, cfg.align_mode, cfg.anchors,
                         freq_s=freqs["source"], freq_t=freqs["target"])
        m.save_tsv(run.path("alignment.tsv"))
        align_inputs = run.hashes(run.path("glove_source.emb"), run.path("glove_target.emb"))
        align_inputs.update(tok_hash)
        ratio = overlap_ratio(tok_s, tok_t)
        run.record("overlap_ratio", ratio, "align", tok_hash)
        run.record("fallback_target_rows", len(m.fallback_t), "align", align_inputs)

    summary = {"overlap_ratio": ratio}
    with run.stage("evaluate"):
        inputs = run.hashes(run.path("alignment.tsv"), run.path("source.tks"), run.path("target.tks"))
        if cfg.eval_bleu1:
            converted = convert_stream(stream_s, m)
            summary["bleu1"] = bleu1(converted, stream_t)
            run.record("bleu1", summary["bleu1"], "evaluate", inputs)
        if cfg.eval_semantic:
            converted = convert_stream(stream_s, m)
            recovered = tok_t.decode_segments(converted)
            originals = tok_t.decode_segments(stream_t)
            embedder = GloveSegmentEmbedder(tok_t, embs["target"])
            summary["semantic"] = semantic_score(originals, recovered, embedder)
            sem_inputs = dict(inputs, **run.hashes(run.path("glove_target.emb")))
            run.record("semantic_score", summary["semantic"], "evaluate", sem_inputs)
        if cfg.eval_compression:
            for side, tok in (("source", tok_s), ("target", tok_t)):
                run.record(f"compression_rate_{side}", compression_rate(tok, lines), "evaluate",
                           dict(corpus_hash, **tok_hash))
        write_summary(run.path("align_summary.json"), **summary)

    with run.stage("source_model"):
        if cfg.source_model is not None:
            src = LmParams.load(cfg.source_model)
            if src.config.vocab_size != len(tok_s):
                raise ValueError(f"source model vocab {src.config.vocab_size} != "
                                 f"source tokenizer size {len(tok_s)}")
            src_inputs = run.hashes(cfg.source_model)
        else:
            spec = cfg.source_lm
            seed = stage_seed(cfg.seed, "source_lm")
            src = init_params(LmConfig(len(tok_s), spec.d_model, spec.n_layers, spec.context), seed)
            plan = TrainPlan(total_steps=spec.steps, stage_boundary=0, lr_stage2=spec.lr,
                             batch_tokens=spec.batch_tokens, seed=seed)
            src, hist = full_finetune(src, stream_s, plan)
            src.save(run.path("source_model"), seed=seed, step=spec.steps)
            write_loss_csv(run.path("source_model_loss.csv"), hist)
            src_inputs = run.hashes(run.path("source_model"))

    with run.stage("init"):
        seed = stage_seed(cfg.seed, "init")
        p0 = init_target_params(src, len(tok_t), InitMethod(cfg.init_method, seed), m)
        p0.save(run.path("init_model"), seed=seed)
        plan = dataclasses.replace(cfg.plan, seed=stage_seed(cfg.seed, "adapt"))
        fsl = first_step_loss(p0, stream_t, plan)
        run.record("first_step_loss", fsl, "init",
                   dict(src_inputs, **run.hashes(run.path("alignment.tsv"), run.path("target.tks"))),
                   seed)

    with run.stage("adapt"):
        p1, hist = two_stage_finetune(p0, stream_t, plan)
        p1.save(run.path("adapted_model"), seed=plan.seed, step=plan.total_steps)
        write_loss_csv(run.path("loss.csv"), hist)
        _dump_json(run.path("manifest.json"), {
            "init_method": cfg.init_method,
            "alignment": "alignment.tsv",
            "plan": dataclasses.asdict(plan),
            "loss_csv": "loss.csv",
        })
        if hist:
            run.record("final_loss", hist[-1].nll, "adapt", run.hashes(run.path("init_model")),
                       plan.seed)

    if cfg.eval_ppl:
        with run.stage("perplexity"):
            eval_lines = read_lines(cfg.eval_corpus) if cfg.eval_corpus else lines
            eval_hash = {Path(cfg.eval_corpus or cfg.corpus).name:
                         sha256_file(cfg.eval_corpus or cfg.corpus)}
            for name, model, tok in (("source", src, tok_s), ("adapted", p1, tok_t)):
                stats = perplexity_stats(model, tok, tok_s, eval_lines)
                inputs = dict(eval_hash, **tok_hash)
                inputs.update(run.hashes(run.path(f"{name}_model") if name == "adapted"
                                         else (cfg.source_model or run.path("source_model"))))
                run.record(f"normalized_ppl_{name}", stats.as_dict(), "perplexity", inputs)


# -- subcommands --------------------------------------------------------------

def cmd_train_bpe(a):
    lines = read_lines(a.corpus)
    tok = train_bpe(lines, a.size, special_tokens=a.special or ())
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tok.save(out / "vocab.json", out / "merges.txt")
    print(f"{len(tok)} tokens, {len(tok.merges)} merges -> {out}")


def cmd_tokenize(a):
    tok = load_tokenizer(a.vocab, a.merges)
    stream = tok.encode_lines(read_lines(a.corpus))
    stream.save(a.out)
    print(f"{len(stream)} tokens in {stream.n_segments} segments -> {a.out}")


def cmd_count(a):
    stream = TokenStream.load(a.stream)
    table = count_cooc_sharded(stream, a.window, a.vocab_size, n_shards=env_threads())
    table.save(a.out)
    print(f"{len(table)} nonzero cells over vocab {table.vocab_size} -> {a.out}")


def cmd_glove(a):
    table = CoocTable.load(a.cooc)
    cfg = GloveConfig(dim=a.dim, iterations=a.iterations, x_max=a.x_max, alpha=a.alpha,
                      learning_rate=a.lr, seed=a.seed, vector=a.vector, threads=env_threads(),
                      min_count=a.min_count)
    counts = None
    if a.stream:
        counts = np.bincount(TokenStream.load(a.stream).ids, minlength=table.vocab_size)
    emb = train_glove(table, cfg, counts=counts)
    emb.save(a.out)
    print(f"{emb.trained.sum()} of {emb.rows} rows trained -> {a.out}")


def _freqs(path, n):
    return np.bincount(TokenStream.load(path).ids, minlength=n) if path else None


def cmd_align(a):
    emb_s, emb_t = EmbeddingMatrix.load(a.source_emb), EmbeddingMatrix.load(a.target_emb)
    shared = ()
    summary = {}
    if a.source_vocab:
        tok_s = load_tokenizer(a.source_vocab, a.source_merges)
        tok_t = load_tokenizer(a.target_vocab, a.target_merges)
        shared = shared_tokens(tok_s, tok_t)
        summary["overlap_ratio"] = overlap_ratio(tok_s, tok_t)
    m = align_vocabs(emb_s, emb_t, shared, a.mode, a.anchors,
                     freq_s=_freqs(a.source_stream, emb_s.rows),
                     freq_t=_freqs(a.target_stream, emb_t.rows))
    m.save_tsv(a.out)
    if a.source_stream and a.target_stream:
        summary["bleu1"] = bleu1(convert_stream(TokenStream.load(a.source_stream), m),
                                 TokenStream.load(a.target_stream))
    summary["fallback_target_rows"] = len(m.fallback_t)
    write_summary(a.summary or Path(a.out).with_suffix(".json"), **summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_eval(a):
    if a.bleu1:
        cand, ref = (TokenStream.load(p) for p in a.bleu1)
        if a.alignment:
            cand = convert_stream(cand, AlignmentMap.load_tsv(a.alignment))
        print(bleu1(cand, ref, brevity_penalty=not a.no_brevity_penalty))
    if a.semantic:
        orig, rec = (read_lines(p) for p in a.semantic)
        if a.segment_emb:
            va, vb = (read_segment_embeddings(p) for p in a.segment_emb)
            if len(va) != len(orig) or len(vb) != len(rec):
                raise ValueError("segment embedding files must have one row per corpus line")
            print(semantic_score_from_vectors(va, vb))
        elif a.vocab and a.emb:
            embedder = GloveSegmentEmbedder(load_tokenizer(a.vocab, a.merges),
                                            EmbeddingMatrix.load(a.emb))
            print(semantic_score(orig, rec, embedder))
        else:
            raise UsageError("--semantic needs --segment-emb A B or --vocab/--merges/--emb")
    if not (a.bleu1 or a.semantic):
        raise UsageError("eval needs --bleu1 and/or --semantic")


def cmd_compress(a):
    tok = load_tokenizer(a.vocab, a.merges)
    print(compression_rate(tok, read_lines(a.corpus)))


def cmd_init(a):
    src = LmParams.load(a.source_model)
    m = AlignmentMap.load_tsv(a.alignment) if a.alignment else None
    n_target = a.target_size or (m.target_size if m else None)
    if n_target is None:
        raise UsageError("init needs --alignment or --target-size")
    if a.method == "aligned" and m is None:
        raise UsageError("method 'aligned' needs --alignment")
    shared = m.shared if m else ()
    p = init_target_params(src, n_target, InitMethod(a.method, a.seed), m, shared)
    p.save(a.out, seed=a.seed)
    print(f"{a.method} init, vocab {n_target} -> {a.out}")


def cmd_adapt(a):
    p = LmParams.load(a.model)
    stream = TokenStream.load(a.stream)
    plan = TrainPlan(total_steps=a.steps, stage_boundary=a.stage_boundary, lr_stage1=a.lr_stage1,
                     lr_stage2=a.lr_stage2, batch_tokens=a.batch_tokens,
                     distill_weight=a.distill_weight, temperature=a.temperature,
                     task_mix=a.task_mix, seed=a.seed)
    if a.teacher or a.teacher_logits:
        if not a.task_stream:
            raise UsageError("distillation needs --task-stream")
        teacher = (teacher_from_params(LmParams.load(a.teacher)) if a.teacher
                   else TeacherLogitsFile(a.teacher_logits))
        out, hist = distill_finetune(p, teacher, stream, TokenStream.load(a.task_stream), plan)
    else:
        out, hist = two_stage_finetune(p, stream, plan)
    out_dir = Path(a.out)
    out.save(out_dir, seed=a.seed, step=a.steps)
    write_loss_csv(out_dir / "loss.csv", hist)
    _dump_json(out_dir / "run_manifest.json", {
        "init_model": str(a.model), "alignment": a.alignment, "plan": dataclasses.asdict(plan),
        "loss_csv": "loss.csv", "distill": bool(a.teacher or a.teacher_logits),
    })
    print(f"{len(hist)} steps, final nll {hist[-1].nll if hist else float('nan'):.4f} -> {out_dir}")


def cmd_ppl(a):
    p = LmParams.load(a.model)
    tok = load_tokenizer(a.vocab, a.merges)
    ref = load_tokenizer(a.ref_vocab, a.ref_merges) if a.ref_vocab else tok
    print(json.dumps(perplexity_stats(p, tok, ref, read_lines(a.corpus)).as_dict(), sort_keys=True))


def cmd_pipeline(a):
    path = Path(a.config)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    cfg = _override(RunConfig.from_dict(raw, base_dir=path.parent), a)
    out = run_pipeline(cfg)
    print(f"run complete -> {out}")


def cmd_synth(a):
    lines, tags = bilingual_corpus(a.bytes, a.seed)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "corpus_a.txt").write_text(
        "\n".join(l for l, t in zip(lines, tags) if t == "a") + "\n", encoding="utf-8")
    print(f"{len(lines)} lines -> {out}")


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vocalign", description="Vocabulary replacement for language models.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train-bpe", help="train a byte-level BPE tokenizer")
    s.add_argument("--corpus", required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--special", nargs="*")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train_bpe)

    s = sub.add_parser("tokenize", help="encode a corpus into a token stream")
    s.add_argument("--vocab", required=True)
    s.add_argument("--merges", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("count", help="co-occurrence counts of a token stream")
    s.add_argument("--stream", required=True)
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--vocab-size", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("glove", help="train GloVe vectors on a co-occurrence table")
    d = GloveConfig()
    s.add_argument("--cooc", required=True)
    s.add_argument("--stream", help="token stream for --min-count frequencies")
    s.add_argument("--dim", type=int, default=d.dim)
    s.add_argument("--iterations", type=int, default=d.iterations)
    s.add_argument("--x-max", type=float, default=d.x_max)
    s.add_argument("--alpha", type=float, default=d.alpha)
    s.add_argument("--lr", type=float, default=d.learning_rate)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vector", choices=("sum", "center", "context"), default=d.vector)
    s.add_argument("--min-count", type=int, default=d.min_count)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_glove)

    s = sub.add_parser("align", help="align two embedding matrices")
    s.add_argument("--source-emb", required=True)
    s.add_argument("--target-emb", required=True)
    s.add_argument("--source-vocab")
    s.add_argument("--source-merges")
    s.add_argument("--target-vocab")
    s.add_argument("--target-merges")
    s.add_argument("--source-stream")
    s.add_argument("--target-stream")
    s.add_argument("--mode", choices=("direct", "relative"), default="direct")
    s.add_argument("--anchors", type=int, default=300)
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("eval", help="alignment quality metrics")
    s.add_argument("--bleu1", nargs=2, metavar=("CANDIDATE", "REFERENCE"))
    s.add_argument("--alignment", help="convert the candidate stream through this map first")
    s.add_argument("--no-brevity-penalty", action="store_true")
    s.add_argument("--semantic", nargs=2, metavar=("ORIGINAL", "RECOVERED"))
    s.add_argument("--segment-emb", nargs=2, metavar=("ORIGINAL_EMB", "RECOVERED_EMB"))
    s.add_argument("--vocab")
    s.add_argument("--merges")
    s.add_argument("--emb")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compress", help="bytes per token of a corpus")
    s.add_argument("--vocab", required=True)
    s.add_argument("--merges", required=True)
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("init", help="initialize a target-vocabulary model")
    s.add_argument("--source-model", required=True)
    s.add_argument("--alignment")
    s.add_argument("--target-size", type=int)
    s.add_argument("--method", choices=INIT_METHODS, default="aligned")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("adapt", help="two-stage fine-tuning, optionally with distillation")
    s.add_argument("--model", required=True)
    s.add_argument("--stream", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--stage-boundary", type=int)
    s.add_argument("--lr-stage1", type=float, default=1e-3)
    s.add_argument("--lr-stage2", type=float, default=1e-3)
    s.add_argument("--batch-tokens", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alignment", help="recorded in the run manifest")
    s.add_argument("--teacher", help="teacher model directory")
    s.add_argument("--teacher-logits", help="precomputed teacher logits file")
    s.add_argument("--task-stream")
    s.add_argument("--distill-weight", type=float, default=1.0)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--task-mix", type=float, default=0.15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("ppl", help="normalized perplexity")
    s.add_argument("--model", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--merges", required=True)
    s.add_argument("--ref-vocab")
    s.add_argument("--ref-merges")
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_ppl)

    s = sub.add_parser("pipeline", help="run every stage from a JSON run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--method", choices=INIT_METHODS)
    s.add_argument("--mode", choices=("direct", "relative"))
    s.add_argument("--anchors", type=int)
    s.add_argument("--source-model")
    s.add_argument("--dim", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("synth", help="write a synthetic two-language corpus")
    s.add_argument("--bytes", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (1) and --help / --version (0)
        return exc.code
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"vocalign: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailed as exc:
        code = _exit_code(exc.cause)
        if code is None:
            raise
        print(f"vocalign: {exc}", file=sys.stderr)
        return code
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"vocalign: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (FloatingPointError, OverflowError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, OSError, KeyError, IndexError, UnicodeError, json.JSONDecodeError)):
        return EXIT_DATA
    return None


if __name__ == "__main__":
    sys.exit(main())
