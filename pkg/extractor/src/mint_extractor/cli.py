"""mint-extract: produce embedding dumps from an image dataset directory.

Exit codes match the main CLI: 0 success, 1 usage error, 2 data error.
"""

import argparse
import sys

from mint_tta.errors import DataError, UsageError

from .extract import DEFAULT_TEMPLATES, ExtractJob, corrupt_tag, extract


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="mint-extract", description=__doc__)
    parser.add_argument("--dataset", required=True,
                        help="dataset root (class-per-subdirectory)")
    parser.add_argument("--model", default="toy:64",
                        help="encoder id: toy:<dim> or a CLIP checkpoint name")
    parser.add_argument("--output", required=True, help="dump path (.mintdump)")
    parser.add_argument("--templates", nargs="+", default=list(DEFAULT_TEMPLATES),
                        help="prompt templates with a {} class placeholder")
    parser.add_argument("--tags", default=None,
                        help="comma list of corruption tags; dataset root then holds "
                             "one sub-dataset per tag and one dump is written per tag")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        job = ExtractJob(
            dataset_root=args.dataset,
            model_id=args.model,
            output_path=args.output,
            prompt_templates=args.templates,
            device=args.device,
            batch_size=args.batch_size,
        )
        if args.tags:
            paths = corrupt_tag(job, [t.strip() for t in args.tags.split(",") if t.strip()])
        else:
            paths = [extract(job)]
        for path in paths:
            print(f"wrote {path}")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
