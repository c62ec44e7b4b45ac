"""Command line for the embedding exporter.

    embed-export static --model NAME --words words.txt --units units.txt --out emb.bin
    embed-export contextual --model NAME --utterances utts.json --out ctx.bin

Words file: one word per line.  Units file: one unit per line as
"kind<TAB>surface" with kind in {domain, slot}.  Utterances file: JSON object
mapping utterance id to text.
"""

from __future__ import annotations

import argparse
import json
import sys

from comer.embeddings import TokenUnit

from .core import ExportError, ExportSpec, export_contextual, export_static


def _read_lines(path: str) -> list[str]:
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


def _read_units(path: str) -> list[TokenUnit]:
    units = []
    for line in _read_lines(path):
        kind, _, surface = line.partition("\t")
        if not surface or kind not in ("domain", "slot"):
            raise ExportError(f"bad unit line {line!r}; expected 'kind<TAB>surface'")
        units.append(TokenUnit(surface, kind))
    return units


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="embed-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p_static = sub.add_parser("static", help="export word + unit vectors")
    p_static.add_argument("--model", required=True)
    p_static.add_argument("--words", required=True)
    p_static.add_argument("--units", default=None)
    p_static.add_argument("--out", default="embeddings.bin")

    p_ctx = sub.add_parser("contextual", help="export per-utterance matrices")
    p_ctx.add_argument("--model", required=True)
    p_ctx.add_argument("--utterances", required=True)
    p_ctx.add_argument("--out", default="contextual.bin")

    args = parser.parse_args(argv)
    try:
        if args.command == "static":
            spec = ExportSpec(
                model=args.model,
                words=_read_lines(args.words),
                units=_read_units(args.units) if args.units else [],
                output=args.out,
            )
            path = export_static(spec)
        else:
            with open(args.utterances) as f:
                utterances = json.load(f)
            spec = ExportSpec(model=args.model, utterances=utterances, output=args.out)
            path = export_contextual(spec)
    except (ExportError, OSError, json.JSONDecodeError) as e:
        print(f"export error: {e}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
