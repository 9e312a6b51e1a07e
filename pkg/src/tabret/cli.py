"""Command line client for the retrieval workflows.

Every subcommand assembles the same JSON body the HTTP service accepts and
either runs the handler in process (the default) or POSTs the body to a
running server (``--server``). Flag values override ``--config`` file values,
which override the documented defaults. Exit codes: 0 success, 1 file or IO
problem, 2 invalid input or flags, 3 index/model fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Optional

import httpx
from pydantic import BaseModel, ValidationError

from . import service
from .errors import FingerprintMismatchError, SchemaError

logger = logging.getLogger("tabret")

_EXIT_IO = 1
_EXIT_INVALID = 2
_EXIT_FINGERPRINT = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


class _Flag:
    """One CLI flag and the request-body path it assigns."""

    def __init__(
        self,
        name: str,
        path: tuple[str, ...],
        kind: Callable[[str], Any] | None = str,
        help: str = "",
    ):
        self.name = name
        self.path = path
        self.kind = kind  # None marks a boolean switch
        self.help = help

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        dest = self.name.lstrip("-").replace("-", "_")
        if self.kind is None:
            parser.add_argument(
                self.name, dest=dest, action="store_true",
                default=argparse.SUPPRESS, help=self.help,
            )
        else:
            parser.add_argument(
                self.name, dest=dest, type=self.kind,
                default=argparse.SUPPRESS, help=self.help,
            )


def _model_flags(seed_paths: tuple[tuple[str, ...], ...] = (("settings", "seed"),)) -> list[_Flag]:
    # --seed may fan out to several fields (model init and shuffling).
    flags = [
        _Flag("--embedder", ("settings", "embedder"), str, "hashed, vocab, or external"),
        _Flag("--dim", ("settings", "dim"), int, "embedding width"),
        _Flag("--mode", ("settings", "mode"), str, "question side: explicit or implicit"),
        _Flag("--ablation", ("settings", "ablation"), str,
              "full, no_S1, no_S2, no_S2_head, no_S2_value, or no_S1_S2"),
        _Flag("--pooling", ("settings", "pooling"), str, "mean, max, or attentive"),
        _Flag("--n-seeds", ("settings", "n_seeds"), int, "learned query vectors"),
        _Flag("--projection-dim", ("settings", "projection_dim"), int, "output width"),
        _Flag("--context-window", ("settings", "context_window"), int,
              "neighbor radius for contextual mixing"),
        _Flag("--context-alpha", ("settings", "context_alpha"), float,
              "contextual mixing strength in [0, 1)"),
        _Flag("--external-embeddings", ("settings", "external_embeddings"), str,
              "token vector file for the external embedder"),
    ]
    for path in seed_paths:
        flags.append(_Flag("--seed", path, int, "seed for all randomness"))
    return flags


class _Command:
    def __init__(
        self,
        name: str,
        endpoint: str,
        model: type[BaseModel],
        handler: Callable[[Any], BaseModel],
        flags: list[_Flag],
        help: str,
    ):
        self.name = name
        self.endpoint = endpoint
        self.model = model
        self.handler = handler
        self.help = help
        # Merge duplicate flag names (e.g. --seed fanning out to two paths).
        self.paths: dict[str, list[tuple[str, ...]]] = {}
        self.unique_flags: list[_Flag] = []
        for flag in flags:
            dest = flag.name.lstrip("-").replace("-", "_")
            if dest not in self.paths:
                self.paths[dest] = []
                self.unique_flags.append(flag)
            self.paths[dest].append(flag.path)


def _commands() -> list[_Command]:
    return [
        _Command(
            "synth", "/synth", service.SynthRequest, service.run_synth,
            [
                _Flag("--out-dir", ("out_dir",), str, "directory for the generated files"),
                _Flag("--seed", ("seed",), int, "generation seed"),
                _Flag("--tables", ("n_tables",), int, "number of tables"),
                _Flag("--columns", ("columns_per_table",), int, "columns per table"),
                _Flag("--vocab-size", ("vocab_size",), int, "pseudo-word vocabulary size"),
                _Flag("--questions-per-table", ("questions_per_table",), int,
                      "questions generated per table"),
                _Flag("--distractors", ("distractor_tokens",), int,
                      "function words mixed into each question"),
                _Flag("--confusers", ("confuser_tokens",), int,
                      "header words borrowed from non-gold tables per question"),
            ],
            "generate a synthetic benchmark",
        ),
        _Command(
            "ingest", "/ingest", service.IngestRequest, service.run_ingest,
            [
                _Flag("--tables", ("tables_path",), str, "raw tables file (jsonl)"),
                _Flag("--corpus", ("corpus_path",), str, "output corpus file"),
                _Flag("--mapping", ("mapping_path",), str, "output id mapping file"),
                _Flag("--max-rows", ("max_rows",), int, "rows sampled per table"),
                _Flag("--token-budget", ("token_budget",), int,
                      "max tokens per table after linearization (0 disables)"),
                _Flag("--seed", ("seed",), int, "row sampling seed"),
            ],
            "deduplicate, sample, and trim raw tables into a corpus",
        ),
        _Command(
            "build-index", "/index/build", service.BuildIndexRequest, service.run_build_index,
            [
                _Flag("--corpus", ("corpus_path",), str, "ingested corpus file"),
                _Flag("--index", ("index_path",), str, "output index file"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "trained model to index with"),
                *_model_flags(),
            ],
            "precompute and pack table representations",
        ),
        _Command(
            "retrieve", "/retrieve", service.RetrieveRequest, service.run_retrieve,
            [
                _Flag("--index", ("index_path",), str, "packed index file"),
                _Flag("--questions", ("questions_path",), str, "questions file (jsonl)"),
                _Flag("--rankings", ("rankings_path",), str, "output rankings file"),
                _Flag("--k", ("k",), int, "tables returned per question"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "trained model checkpoint"),
                *_model_flags(),
            ],
            "rank tables for each question",
        ),
        _Command(
            "train", "/train", service.TrainRequest, service.run_train,
            [
                _Flag("--corpus", ("corpus_path",), str, "ingested corpus file"),
                _Flag("--mapping", ("mapping_path",), str, "id mapping file"),
                _Flag("--train-questions", ("train_questions_path",), str, "training questions"),
                _Flag("--dev-questions", ("dev_questions_path",), str, "validation questions"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "output checkpoint file"),
                _Flag("--history", ("history_path",), str, "output per-epoch history (jsonl)"),
                _Flag("--lr", ("training", "learning_rate"), float, "peak learning rate"),
                _Flag("--weight-decay", ("training", "weight_decay"), float, "decoupled decay"),
                _Flag("--warmup-ratio", ("training", "warmup_ratio"), float, "warmup fraction"),
                _Flag("--batch-size", ("training", "batch_size"), int, "questions per batch"),
                _Flag("--epochs", ("training", "max_epochs"), int, "training epochs"),
                _Flag("--hard-negatives", ("training", "hard_negatives"), None,
                      "mine extra negatives with the current model"),
                _Flag("--negatives", ("training", "negatives_per_question"), int,
                      "mined negatives per question"),
                _Flag("--remine-every", ("training", "remine_every"), int,
                      "epochs between mining passes"),
                *_model_flags(seed_paths=(("settings", "seed"), ("training", "seed"))),
            ],
            "train the scoring model on question-table pairs",
        ),
        _Command(
            "eval", "/eval", service.EvalRequest, service.run_eval,
            [
                _Flag("--questions", ("questions_path",), str, "questions file (jsonl)"),
                _Flag("--mapping", ("mapping_path",), str, "id mapping file"),
                _Flag("--report", ("report_path",), str, "output report file (json)"),
                _Flag("--k", ("ks",), _int_list, "comma-separated recall cutoffs"),
                _Flag("--index", ("index_path",), str, "packed index file"),
                _Flag("--corpus", ("corpus_path",), str, "corpus to index on the fly"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "trained model checkpoint"),
                *_model_flags(),
            ],
            "measure recall at the requested cutoffs",
        ),
        _Command(
            "bench", "/bench", service.BenchRequest, service.run_bench,
            [
                _Flag("--index", ("index_path",), str, "packed index file"),
                _Flag("--questions", ("questions_path",), str, "questions file (jsonl)"),
                _Flag("--report", ("report_path",), str, "output report file (json)"),
                _Flag("--k", ("k",), int, "tables returned per question"),
                _Flag("--warmup", ("warmup",), int, "untimed warmup queries"),
                _Flag("--repeats", ("repeats",), int, "timed repeats per question"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "trained model checkpoint"),
                _Flag("--threads", ("threads",), int, "thread count recorded in the report"),
                *_model_flags(),
            ],
            "measure end-to-end query latency",
        ),
        _Command(
            "explain", "/explain", service.ExplainRequest, service.run_explain,
            [
                _Flag("--corpus", ("corpus_path",), str, "ingested corpus file"),
                _Flag("--question", ("question",), str, "question text"),
                _Flag("--table-id", ("table_id",), str, "table to explain against"),
                _Flag("--report", ("report_path",), str, "output report file (json)"),
                _Flag("--mapping", ("mapping_path",), str, "id mapping file"),
                _Flag("--checkpoint", ("checkpoint_path",), str, "trained model checkpoint"),
                *_model_flags(),
            ],
            "dump seed attention matrices for one question-table pair",
        ),
    ]


def build_parser(commands: list[_Command]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabret", description="late-interaction table retrieval"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in commands:
        cmd_parser = sub.add_parser(command.name, help=command.help)
        cmd_parser.add_argument(
            "--config", default=None, help="JSON file with request defaults"
        )
        cmd_parser.add_argument(
            "--server", default=None, help="base URL of a running service"
        )
        for flag in command.unique_flags:
            flag.add_to(cmd_parser)
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _assign(body: dict, path: tuple[str, ...], value: Any) -> None:
    node = body
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def _request_body(command: _Command, args: argparse.Namespace) -> dict:
    body: dict = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise SchemaError("config file must hold a JSON object")
        body = loaded
    for dest, paths in command.paths.items():
        if hasattr(args, dest):
            for path in paths:
                _assign(body, path, getattr(args, dest))
    return body


def _post(server: str, endpoint: str, body: dict, client: httpx.Client | None) -> dict:
    # An injected client (e.g. a test client wired to the app) wins over a
    # fresh connection to the server URL.
    if client is None:
        with httpx.Client(base_url=server, timeout=None) as owned:
            response = owned.post(endpoint, json=body)
    else:
        response = client.post(endpoint, json=body)
    if response.status_code == 422:
        raise SchemaError(response.text)
    if response.status_code == 409:
        raise FingerprintMismatchError(response.text)
    if response.status_code == 404:
        raise FileNotFoundError(response.text)
    if response.status_code >= 400:
        raise OSError(f"server error {response.status_code}: {response.text}")
    return response.json()


def main(argv: Optional[list[str]] = None, client: httpx.Client | None = None) -> int:
    logging.basicConfig(level=os.environ.get("TABRET_LOG_LEVEL", "WARNING").upper())
    commands = {c.name: c for c in _commands()}
    parser = build_parser(list(commands.values()))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for bad flags; keep 0, map the
        # rest onto the invalid-input code.
        return 0 if not exc.code else _EXIT_INVALID

    if args.command == "serve":
        import uvicorn

        from .app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    command = commands[args.command]
    try:
        if getattr(args, "threads", None) is not None:
            os.environ["TABRET_THREADS"] = str(args.threads)
        body = _request_body(command, args)
        if args.server is not None:
            payload = _post(args.server, command.endpoint, body, client)
        else:
            request = command.model.model_validate(body)
            payload = command.handler(request).model_dump()
    except (ValidationError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INVALID
    except FingerprintMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_FINGERPRINT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return _EXIT_IO
    except (OSError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_IO
    logger.info("%s finished", args.command)
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    return 0


def entrypoint() -> None:
    sys.exit(main())
