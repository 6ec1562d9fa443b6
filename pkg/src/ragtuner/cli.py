"""Command-line entry point.

Subcommands: index, ask, train, sweep, eval, gradcheck, config. Every
command exits 0 on success, 1 when the caller's input was at fault, and 2
when a computation or backend failed. All behavior is deterministic given
the config file and seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import config as configmod
from .adapters import (
    AdapterConfig,
    DoraWeight,
    LoraAdapter,
    adapter_scale,
    dora_backward,
    dora_forward,
    init_lora,
    save_checkpoint,
)
from .errors import InputError, RagtunerError
from .metrics import evaluate_corpus
from .numkit import RngStream, finite_difference_gradient
from .rerag.pipeline import run_pipeline
from .retrieval import VectorIndex, chunk_text
from .trainer import (
    build_toy_model,
    generate_synthetic_dataset,
    load_qa_jsonl,
    run_sweep,
    train,
)

GRADCHECK_TOLERANCE = 1e-4


def _load_config(args) -> configmod.RunConfig:
    if getattr(args, "config", None):
        return configmod.load(args.config)
    return configmod.RunConfig()


def _iter_corpus(corpus: Path):
    """Yield (doc_id, text) pairs from a directory of .txt files or a JSONL file."""
    if corpus.is_dir():
        for path in sorted(corpus.glob("*.txt")):
            yield path.stem, path.read_text(encoding="utf-8")
        return
    if not corpus.exists():
        raise InputError(f"corpus not found: {corpus}")
    with open(corpus, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{corpus}:{lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
                raise InputError(f"{corpus}:{lineno}: expected an object with a 'text' string")
            yield str(doc.get("doc_id", f"doc{lineno:04d}")), doc["text"]


def cmd_index(args) -> int:
    cfg = _load_config(args)
    embedder = configmod.make_embedder(cfg)
    index = VectorIndex(dim=cfg.retrieval.embed_dim)
    chunk_id = 0
    docs = 0
    for doc_id, text in _iter_corpus(Path(args.corpus)):
        docs += 1
        for chunk in chunk_text(doc_id, text, start_id=chunk_id):
            index.insert(chunk, embedder.embed(chunk.text))
            chunk_id += 1
    out = args.out or cfg.retrieval.index_path
    index.save(out)
    print(f"indexed {len(index)} chunks from {docs} documents into {out}")
    return 0


def cmd_ask(args) -> int:
    cfg = _load_config(args)
    index_path = Path(args.index or cfg.retrieval.index_path)
    if not index_path.exists():
        raise InputError(f"index not found: {index_path} (run 'ragtuner index' first)")
    index = VectorIndex.load(index_path)
    answer, trace = run_pipeline(
        args.question,
        index,
        configmod.make_critic(cfg),
        configmod.make_generator(cfg),
        configmod.make_embedder(cfg),
        params=cfg.rerag.rewrite_params(),
        k=cfg.retrieval.k,
    )
    print(answer)
    if args.trace:
        Path(args.trace).write_text(trace.to_json(), encoding="utf-8")
    return 0


def _byte_tokens(records, seq_len: int, vocab_size: int) -> np.ndarray:
    """Byte-tokenize QA records (mod vocab) into fixed-length sequences.

    Demo-quality ingestion: records shorter than seq_len bytes are dropped.
    """
    rows = []
    for rec in records:
        data = f"{rec.instruction} {rec.output}".encode("utf-8")
        if len(data) >= seq_len:
            rows.append([b % vocab_size for b in data[:seq_len]])
    if not rows:
        raise InputError(f"no record has at least {seq_len} bytes of text")
    return np.asarray(rows, dtype=np.int64)


def _training_dataset(args, cfg) -> np.ndarray:
    if args.data:
        records = load_qa_jsonl(args.data)
        if not records:
            raise InputError(f"dataset file {args.data} is empty")
        return _byte_tokens(records, args.seq_len, cfg.model.vocab_size)
    return generate_synthetic_dataset(
        seed=cfg.optimizer.seed,
        size=args.dataset_size,
        seq_len=args.seq_len,
        vocab_size=cfg.model.vocab_size,
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    model = build_toy_model(cfg.model.vocab_size, cfg.model.embed_dim, cfg.model.seed)
    dataset = _training_dataset(args, cfg)
    adapter = init_lora(
        cfg.adapter,
        model.embed_dim,
        model.embed_dim,
        RngStream(cfg.adapter.init_seed).derive("adapter_init"),
    )
    dora = DoraWeight.from_base(model.w0)
    report = train(model, dataset, cfg.adapter, cfg.noise, cfg.optimizer, adapter=adapter, dora=dora)
    if args.checkpoint:
        save_checkpoint(args.checkpoint, cfg.adapter, dora, adapter)
    print(
        json.dumps(
            {
                "steps": len(report.step_losses),
                "initial_eval_loss": report.initial_eval_loss,
                "final_eval_loss": report.final_eval_loss,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    model = build_toy_model(cfg.model.vocab_size, cfg.model.embed_dim, cfg.model.seed)
    dataset = generate_synthetic_dataset(
        seed=cfg.optimizer.seed,
        size=args.dataset_size,
        seq_len=args.seq_len,
        vocab_size=cfg.model.vocab_size,
    )
    rows = run_sweep(
        model,
        dataset,
        variants=args.variants,
        ranks=args.ranks or [cfg.adapter.rank],
        alpha_nefs=args.alpha_nefs if args.alpha_nefs is not None else [cfg.noise.alpha_nef],
        seeds=args.seeds,
        alpha=cfg.adapter.alpha,
        lr=cfg.optimizer.lr,
        steps=cfg.optimizer.steps,
        denominator_variant=cfg.noise.denominator_variant,
    )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["variant", "rank", "alpha_nef", "seed", "final_loss"])
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def _read_eval_lines(path: Path) -> list[str]:
    """Each line is a JSON string or an object with a 'text' field."""
    if not path.exists():
        raise InputError(f"file not found: {path}")
    texts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
            if isinstance(doc, dict):
                doc = doc.get("text")
            if not isinstance(doc, str):
                raise InputError(f"{path}:{lineno}: expected a string or an object with 'text'")
            texts.append(doc)
    return texts


def cmd_eval(args) -> int:
    predictions = _read_eval_lines(Path(args.predictions))
    references = _read_eval_lines(Path(args.references))
    report = evaluate_corpus(predictions, references)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _gradcheck_case(rng: RngStream):
    """One random layer: analytic gradients vs central finite differences."""
    d_in = int(rng.derive("d_in").integers(2, 17, 1)[0])
    d_out = int(rng.derive("d_out").integers(2, 17, 1)[0])
    rank = int(rng.derive("rank").integers(1, 9, 1)[0])
    cfg = AdapterConfig(rank=rank, alpha=4.0, scaling_mode="rank_sqrt")
    gamma = adapter_scale(cfg)

    w0 = rng.derive("w0").uniform(-1, 1, (d_out, d_in))
    adapter = init_lora(cfg, d_in, d_out, rng.derive("adapter"))
    adapter.b_matrix = rng.derive("b").uniform(-0.5, 0.5, (d_out, rank))
    dw = DoraWeight(w0=w0, magnitude=rng.derive("m").uniform(0.5, 1.5, d_in))
    x = rng.derive("x").uniform(-1, 1, d_in)
    upstream = rng.derive("u").uniform(-1, 1, d_out)

    grads = dora_backward(x, dw, adapter, gamma, upstream)
    analytic = np.concatenate(
        [grads.grad_a.ravel(), grads.grad_b.ravel(), grads.grad_magnitude]
    )

    a_size, b_size = adapter.a_matrix.size, adapter.b_matrix.size

    def scalar_loss(theta: np.ndarray) -> float:
        a = theta[:a_size].reshape(adapter.a_matrix.shape)
        b = theta[a_size : a_size + b_size].reshape(adapter.b_matrix.shape)
        m = theta[a_size + b_size :]
        probe = LoraAdapter(a_matrix=a, b_matrix=b)
        return float(upstream @ dora_forward(x, DoraWeight(w0=w0, magnitude=m), probe, gamma))

    theta0 = np.concatenate(
        [adapter.a_matrix.ravel(), adapter.b_matrix.ravel(), dw.magnitude]
    )
    numeric = finite_difference_gradient(scalar_loss, theta0)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    err = float(np.max(np.abs(analytic - numeric) / scale))
    return err, (d_out, d_in, rank)


def cmd_gradcheck(args) -> int:
    rng = RngStream(args.seed)
    worst_err, worst_shape, worst_case = -1.0, None, -1
    for case in range(args.cases):
        err, shape = _gradcheck_case(rng.derive(f"case{case}"))
        if err > worst_err:
            worst_err, worst_shape, worst_case = err, shape, case
    d_out, d_in, rank = worst_shape
    print(
        f"gradcheck: {args.cases} cases, worst relative error {worst_err:.3e} "
        f"(case {worst_case}, seed {args.seed}, layer {d_out}x{d_in}, rank {rank}, "
        f"tolerance {GRADCHECK_TOLERANCE:.0e})"
    )
    if worst_err > GRADCHECK_TOLERANCE:
        print("gradcheck FAILED", file=sys.stderr)
        return 2
    return 0


def cmd_config(args) -> int:
    if args.dump_defaults:
        sys.stdout.write(configmod.dump_defaults())
        return 0
    if args.show:
        cfg = _load_config(args)
        sys.stdout.write(configmod.dumps(cfg))
        return 0
    raise InputError("config: pass --dump-defaults or --show")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragtuner",
        description="Decomposed-adapter fine-tuning and retrieval-on-demand QA, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_arg(p):
        p.add_argument("-c", "--config", help="INI config file (defaults apply when omitted)")

    p = sub.add_parser("index", help="chunk and embed a corpus into a vector index")
    p.add_argument("corpus", help="directory of .txt files, or a JSONL file of documents")
    p.add_argument("--out", help="index file path (default: config retrieval.index_path)")
    add_config_arg(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question through the pipeline")
    p.add_argument("question")
    p.add_argument("--index", help="index file (default: config retrieval.index_path)")
    p.add_argument("--trace", help="write the decision trace as JSON to this file")
    add_config_arg(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("train", help="fine-tune the toy model once")
    p.add_argument("--data", help="QA JSONL file; omitted -> synthetic dataset")
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--checkpoint", help="write the trained layer as JSON here")
    add_config_arg(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over a grid of variants/ranks/noise levels")
    p.add_argument("--variants", nargs="+", default=["dora", "dora_plus", "rsdora", "rsdora_plus"])
    p.add_argument("--ranks", nargs="+", type=int, default=None)
    p.add_argument("--alpha-nefs", nargs="+", type=float, default=None)
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    add_config_arg(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("predictions", help="JSONL: one string (or {'text': ...}) per line")
    p.add_argument("references", help="JSONL, same line count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config", help="print default or effective configuration")
    p.add_argument("--dump-defaults", action="store_true")
    p.add_argument("--show", action="store_true", help="print the effective config")
    add_config_arg(p)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RagtunerError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
