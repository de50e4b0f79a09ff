"""Command line front end: embexport mentions|corpus."""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import ExportManifest, export_corpus, export_mentions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Encode text files into EMB1 matrices plus label files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    mentions = sub.add_parser("mentions", help="export a mention JSONL file")
    mentions.add_argument("--input", required=True, help="mention JSONL file")
    mentions.add_argument("--encoder", default="hashed:384")
    mentions.add_argument("--embeddings-out", required=True)
    mentions.add_argument("--labels-out", required=True)
    mentions.add_argument("--paraphrases", default=None, help="paraphrase JSONL file")
    mentions.add_argument("--augmented-out", default=None)

    corpus = sub.add_parser("corpus", help="export a label<TAB>text corpus")
    corpus.add_argument("--input", required=True, help="TSV corpus file")
    corpus.add_argument("--encoder", default="hashed:384")
    corpus.add_argument("--embeddings-out", required=True)
    corpus.add_argument("--labels-out", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = ExportManifest(
            texts_path=args.input,
            encoder=args.encoder,
            output_embeddings=args.embeddings_out,
            output_labels=args.labels_out,
            paraphrases_path=getattr(args, "paraphrases", None),
            output_augmented=getattr(args, "augmented_out", None),
        )
        if args.command == "mentions":
            n, d = export_mentions(manifest)
        else:
            n, d = export_corpus(manifest)
    except (ExportError, OSError) as exc:
        print(f"embexport: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {n} rows of dimension {d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
