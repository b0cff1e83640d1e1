"""embed-adapter command line: extract embeddings into manifest files."""

from __future__ import annotations

import argparse
import sys

from .errors import AdapterError, UsageError
from .extract import ExtractionJob, extract


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="embed-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="encode a token list or image directory")
    p.add_argument("--input", required=True, help="token list file or image directory")
    p.add_argument("--encoder", choices=["text", "clip", "style"], required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--checkpoint", default=None, help="builtin:* (default) or hf:<model>")
    p.add_argument("--dim", type=int, default=512, help="width for the builtin encoders")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = ExtractionJob(
            input_path=args.input,
            encoder=args.encoder,
            output_path=args.out,
            normalize=args.normalize,
            checkpoint=args.checkpoint,
            dim=args.dim,
        )
        manifest = extract(job)
        print(f"wrote {manifest}")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
