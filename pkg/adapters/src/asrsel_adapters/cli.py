"""Adapter CLI mirroring the kernel's stage names.

Subcommands: embed-speech, embed-text, decode, perturb, ppl.
All outputs are kernel wire files.
"""

from __future__ import annotations

import argparse
import sys

from .audio import perturb_audio
from .decode import decode_with_model_noise, orchestrate
from .embed import embed_speech, embed_text
from .ppl import ppl_score
from .wire import Config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asrsel-adapt", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("embed-speech", help="speech embeddings for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default="hash")
    p.add_argument("--audio-root", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed-text", help="text embeddings for a hypothesis file")
    p.add_argument("--hyps", required=True)
    p.add_argument("--model", default="hash")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="decode a manifest (one config or all 28)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--model-seed", type=int, default=0, help="model identity")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--all-configs", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("perturb", help="apply one input perturbation to a WAV file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--pitch", type=int, default=0)
    p.add_argument("--atempo", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ppl", help="fill per-hypothesis perplexities")
    p.add_argument("--hyps", required=True)
    p.add_argument("--lm", default="builtin:en")
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "embed-speech":
            n = embed_speech(args.manifest, args.model, args.out, args.audio_root)
        elif args.cmd == "embed-text":
            n = embed_text(args.hyps, args.model, args.out)
        elif args.cmd == "decode":
            if args.all_configs:
                n = orchestrate(
                    args.manifest, args.out, args.seed, args.audio_root,
                    model_seed=args.model_seed,
                )
            else:
                n = decode_with_model_noise(
                    args.manifest, args.out, alpha=args.alpha, seed=args.seed,
                    audio_root=args.audio_root, model_seed=args.model_seed,
                )
        elif args.cmd == "perturb":
            perturb_audio(args.in_path, Config(args.alpha, args.pitch, args.atempo), args.out)
            n = 1
        else:
            n = ppl_score(args.hyps, args.lm, args.out)
    except (ValueError, OSError) as exc:
        sys.stderr.write("error: %s\n" % (exc,))
        return 1
    sys.stderr.write("%s: wrote %d record(s) to %s\n" % (args.cmd, n, args.out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
