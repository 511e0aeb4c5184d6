"""Command-line entry points tying the pipeline together.

Subcommands: extract-features, train, generate, evaluate-fgd, ablation,
corpus-stats. Every command is deterministic given its flags: all randomness
is seeded via --rng-seed / --seed flags, falling back to the GESTUREDIFF_SEED
environment variable. Each command writes a machine-readable JSON summary
beside its primary output.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import wave
from collections import Counter
from pathlib import Path

import numpy as np

from .bvh import BvhParseError, parse_bvh
from .denoiser import AblationLayout, DenoiserConfig, desk_scale, load_denoiser, save_denoiser
from .diffusion import cosine_schedule
from .fgd import (
    AutoencoderConfig,
    fgd_report,
    load_autoencoder,
    save_autoencoder,
    train_autoencoder,
    windows_from_sequences,
)
from .motion_features import GestureFeatureSeq, Standardizer, extract_motion_features
from .sampling import GenerationRequest, generate_long
from .sidecars import SidecarFormatError, read_gdf1, read_gds1, write_gdf1, write_gds1
from .speech_features import (
    AUDIO_DIM,
    TEXT_DIM,
    AudioFeatureSeq,
    TextFeatureSeq,
    WordEmbeddingLexicon,
    extract_audio_features,
    frame_align_text,
    parse_transcript_tsv,
    read_wav,
    speaker_onehot,
)
from .training import (
    Session,
    TrainSettings,
    configs_from_values,
    parse_run_config,
    run_ablation,
    train,
    window_dataset,
    write_loss_curve,
)

MOTION_FPS = 30


class UsageError(ValueError):
    """Bad input files or flag combinations: exit code 2."""


def _default_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("GESTUREDIFF_SEED")
    return int(env) if env else 0


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_lexicon(path: str | None) -> WordEmbeddingLexicon:
    if path is None:
        return WordEmbeddingLexicon()
    return WordEmbeddingLexicon.from_file(_require(path, "lexicon"))


# --- extract-features --------------------------------------------------------

def cmd_extract_features(args) -> int:
    wav_path = _require(args.wav, "wav file")
    tsv_path = _require(args.tsv, "transcript")
    bvh_path = _require(args.bvh, "bvh file")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.stem or bvh_path.stem

    skeleton, motion = parse_bvh(bvh_path.read_text(encoding="utf-8"))
    gesture = extract_motion_features(skeleton, motion)

    signal, sr = read_wav(wav_path)
    audio = extract_audio_features(signal, sr, target_frames=motion.n_frames,
                                   embedding_sidecar=args.embedding_sidecar)
    transcript = parse_transcript_tsv(tsv_path.read_text(encoding="utf-8"))
    text = frame_align_text(transcript, _load_lexicon(args.lexicon), motion.n_frames)
    speaker_onehot(args.speaker)  # range check

    paths = {
        "gesture": out_dir / f"{stem}.gesture.gdf1",
        "audio": out_dir / f"{stem}.audio.gdf1",
        "text": out_dir / f"{stem}.text.gdf1",
        "standardizer": out_dir / f"{stem}.standardizer.gds1",
        "meta": out_dir / f"{stem}.meta.json",
    }
    write_gdf1(paths["gesture"], gesture.frames)
    write_gdf1(paths["audio"], audio.frames)
    write_gdf1(paths["text"], text.frames)
    from .motion_features import fit_standardizer

    single = fit_standardizer([gesture])
    write_gds1(paths["standardizer"], single.mean, single.std)
    _write_json(paths["meta"], {
        "speaker": args.speaker,
        "fps": MOTION_FPS,
        "frames": motion.n_frames,
        "widths": {"gesture": gesture.width, "audio": AUDIO_DIM, "text": TEXT_DIM},
        "files": {k: v.name for k, v in paths.items() if k != "meta"},
    })
    print(f"wrote {stem}: gesture {gesture.frames.shape}, audio {audio.frames.shape}, "
          f"text {text.frames.shape} -> {out_dir}")
    return 0


# --- train -------------------------------------------------------------------

def _discover_sessions(data_dir: Path) -> list[tuple[str, Session]]:
    sessions = []
    for gesture_path in sorted(data_dir.glob("*.gesture.gdf1")):
        stem = gesture_path.name[: -len(".gesture.gdf1")]
        audio_path = data_dir / f"{stem}.audio.gdf1"
        text_path = data_dir / f"{stem}.text.gdf1"
        meta_path = data_dir / f"{stem}.meta.json"
        for p in (audio_path, text_path, meta_path):
            if not p.exists():
                raise UsageError(f"incomplete session {stem!r}: missing {p.name}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        sessions.append((stem, Session(
            gesture=GestureFeatureSeq(frames=read_gdf1(gesture_path)),
            audio=AudioFeatureSeq(frames=read_gdf1(audio_path)),
            text=TextFeatureSeq(frames=read_gdf1(text_path)),
            speaker=speaker_onehot(int(meta["speaker"])),
        )))
    if not sessions:
        raise UsageError(f"no *.gesture.gdf1 sessions under {data_dir}")
    return sessions


def _build_configs(args, feature_dim: int) -> tuple[DenoiserConfig, TrainSettings]:
    base_config = dataclasses.replace(desk_scale(), feature_dim=feature_dim)
    base_settings = TrainSettings(seed=_default_seed(args.seed))
    values = {}
    if args.config:
        values = parse_run_config(_require(args.config, "run config").read_text(encoding="utf-8"))
    config, settings = configs_from_values(values, base_config, base_settings)
    return config, settings


def cmd_train(args) -> int:
    data_dir = _require(args.data_dir, "data directory")
    sessions = [s for _, s in _discover_sessions(data_dir)]
    config, settings = _build_configs(args, sessions[0].gesture.width)
    layout = AblationLayout(args.layout)

    clips, standardizer = window_dataset(sessions, stride=args.stride)
    result = train(clips, config, settings, layout=layout)

    out = Path(args.out_checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_denoiser(out, result.model)
    std_path = out.with_suffix(out.suffix + ".standardizer.gds1")
    write_gds1(std_path, standardizer.mean, standardizer.std)
    loss_path = Path(args.loss_csv) if args.loss_csv else out.with_suffix(out.suffix + ".loss.csv")
    write_loss_curve(loss_path, result.losses)
    _write_json(out.with_suffix(out.suffix + ".json"), {
        "config": dataclasses.asdict(dataclasses.replace(result.model.config)) | {
            "layout": layout.value},
        "settings": dataclasses.asdict(settings),
        "clips": len(clips),
        "final_loss": float(result.losses[-1]),
        "standardizer": std_path.name,
        "loss_curve": loss_path.name,
    })
    print(f"trained {len(clips)} clips for {settings.steps} steps "
          f"(layout {layout.value}); final loss {result.losses[-1]:.5f}")
    print(f"checkpoint -> {out}")
    return 0


def _load_checkpoint(checkpoint: str) -> tuple:
    ckpt_path = _require(checkpoint, "checkpoint")
    meta_path = ckpt_path.with_suffix(ckpt_path.suffix + ".json")
    meta = json.loads(_require(meta_path, "checkpoint metadata").read_text(encoding="utf-8"))
    config_dict = dict(meta["config"])
    config_dict["layout"] = AblationLayout(config_dict["layout"])
    model = load_denoiser(ckpt_path, DenoiserConfig(**config_dict))
    mean, std = read_gds1(ckpt_path.parent / meta["standardizer"])
    schedule = cosine_schedule(int(meta["settings"]["t_max"]))
    return model, schedule, Standardizer(mean=mean, std=std), meta


# --- generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    model, schedule, standardizer, _ = _load_checkpoint(args.checkpoint)

    skeleton_source = args.skeleton_bvh or args.seed_bvh
    if skeleton_source is None:
        raise UsageError("generate needs --skeleton-bvh or --seed-bvh for the output skeleton")
    skeleton, _ = parse_bvh(_require(skeleton_source, "skeleton bvh").read_text(encoding="utf-8"))

    signal, sr = read_wav(_require(args.wav, "wav file"))
    n_frames = max(int(round(len(signal) / sr * MOTION_FPS)), 1)
    audio = extract_audio_features(signal, sr, target_frames=n_frames,
                                   embedding_sidecar=args.embedding_sidecar)
    transcript = parse_transcript_tsv(_require(args.tsv, "transcript").read_text(encoding="utf-8"))
    text = frame_align_text(transcript, _load_lexicon(args.lexicon), n_frames)

    initial_seed = None
    if args.seed_bvh:
        seed_skel, seed_motion = parse_bvh(Path(args.seed_bvh).read_text(encoding="utf-8"))
        seed_features = extract_motion_features(seed_skel, seed_motion)
        if seed_features.n_frames < 30:
            raise UsageError("--seed-bvh must provide at least 30 frames")
        initial_seed = standardizer.apply(seed_features.frames[:30])

    request = GenerationRequest(
        audio=audio.frames, text=text.frames, speaker=speaker_onehot(args.speaker),
        initial_seed=initial_seed, guidance_scale=args.gamma,
        rng_seed=_default_seed(args.rng_seed),
    )
    result = generate_long(request, model, schedule, standardizer, skeleton)

    out = Path(args.out_bvh)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.bvh_text, encoding="utf-8")
    if args.features_out:
        write_gdf1(args.features_out, result.features)
    _write_json(out.with_suffix(out.suffix + ".json"), {
        "frames": int(result.features.shape[0]),
        "segments": int(np.ceil(result.features.shape[0] / 120)),
        "speaker": args.speaker,
        "gamma": args.gamma,
        "rng_seed": request.rng_seed,
        "out_bvh": out.name,
    })
    print(f"generated {result.features.shape[0]} frames -> {out}")
    return 0


# --- evaluate-fgd ---------------------------------------------------------------

def _load_feature_dir(path: Path) -> list[np.ndarray]:
    files = sorted(path.glob("*.gdf1"))
    matrices = [read_gdf1(p) for p in files if not p.name.endswith((".audio.gdf1", ".text.gdf1"))]
    if not matrices:
        raise UsageError(f"no gesture feature files (*.gdf1) under {path}")
    return matrices


def cmd_evaluate_fgd(args) -> int:
    real = _load_feature_dir(_require(args.real_dir, "real feature directory"))
    generated = _load_feature_dir(_require(args.gen_dir, "generated feature directory"))

    ae_path = Path(args.autoencoder) if args.autoencoder else None
    if ae_path is not None and ae_path.exists():
        feature_dim = real[0].shape[1]
        from .sidecars import read_gdp1

        tensors = read_gdp1(ae_path)
        hidden, d_in = tensors["encoder.0.weight"].shape
        latent = tensors["encoder.2.weight"].shape[0]
        config = AutoencoderConfig(window=d_in // feature_dim, feature_dim=feature_dim,
                                   hidden_dim=hidden, latent_dim=latent)
        autoencoder = load_autoencoder(ae_path, config)
    else:
        windows = windows_from_sequences(real, stride=args.ae_window_stride)
        autoencoder = train_autoencoder(windows, epochs=args.ae_epochs,
                                        seed=_default_seed(args.seed))
        if ae_path is not None:
            save_autoencoder(ae_path, autoencoder)
            print(f"trained stand-in autoencoder -> {ae_path}")

    report = fgd_report(real, generated, autoencoder)
    print(f"FGD feature space: {report.feature_space:.6f}")
    print(f"FGD raw space:     {report.raw_space:.6f}")
    print("(stand-in autoencoder: values are not comparable to published results)")
    if args.out_json:
        _write_json(Path(args.out_json), {
            "fgd_feature_space": report.feature_space,
            "fgd_raw_space": report.raw_space,
            "real_sequences": len(real),
            "generated_sequences": len(generated),
        })
    return 0


# --- ablation --------------------------------------------------------------------

def cmd_ablation(args) -> int:
    data_dir = _require(args.data_dir, "data directory")
    sessions = [s for _, s in _discover_sessions(data_dir)]
    config, settings = _build_configs(args, sessions[0].gesture.width)
    clips, _ = window_dataset(sessions, stride=args.stride)
    if len(clips) < 8:
        raise UsageError(f"need at least 8 clips for the ablation, got {len(clips)}")
    eval_clips = clips[:: args.eval_every]
    train_clips = [c for i, c in enumerate(clips) if i % args.eval_every != 0]

    report = run_ablation(train_clips, eval_clips, config, settings,
                          autoencoder_epochs=args.ae_epochs,
                          sample_seed=_default_seed(args.seed))
    print(report.as_table())
    out_csv = Path(args.out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_csv)
    _write_json(out_csv.with_suffix(".json"), {
        "rows": [
            {"layout": layout.value, "fgd_feature_space": feat, "fgd_raw_space": raw}
            for layout, feat, raw in report.rows
        ],
        "full_scale_reference": {
            layout.value: {"fgd_feature_space": feat, "fgd_raw_space": raw}
            for layout, (feat, raw) in report.reference.items()
        },
        "train_clips": len(train_clips),
        "eval_clips": len(eval_clips),
    })
    print(f"report -> {out_csv}")
    return 0


# --- corpus-stats ------------------------------------------------------------------

def _histogram(values: list[float], bins: int = 10) -> dict:
    if not values:
        return {"counts": [], "edges": []}
    counts, edges = np.histogram(values, bins=bins)
    return {"counts": counts.tolist(), "edges": [float(e) for e in edges]}


def _read_wav_duration(path: Path):
    try:
        with wave.open(str(path), "rb") as fh:
            return fh.getnframes() / fh.getframerate()
    except (wave.Error, OSError, EOFError):
        return None


def _read_tsv_tokens(path: Path):
    try:
        transcript = parse_transcript_tsv(path.read_text(encoding="utf-8"))
    except (ValueError, OSError):
        return None
    return [w.word for w in transcript.words]


def cmd_corpus_stats(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    data_dir = _require(args.data_dir, "data directory")
    tsv_files = sorted(data_dir.glob("*.tsv"))
    wav_files = sorted(data_dir.glob("*.wav"))

    durations: list[float] = []
    words_per_file: list[int] = []
    frequencies: Counter = Counter()
    laugh_count = 0
    unreadable: list[str] = []

    # Per-file work fans out over a bounded pool; merge order stays sorted.
    with ThreadPoolExecutor(max_workers=max(args.workers, 1)) as pool:
        wav_results = list(pool.map(_read_wav_duration, wav_files))
        tsv_results = list(pool.map(_read_tsv_tokens, tsv_files))

    for path, duration in zip(wav_files, wav_results):
        if duration is None:
            unreadable.append(path.name)
        else:
            durations.append(duration)

    for path, tokens in zip(tsv_files, tsv_results):
        if tokens is None:
            unreadable.append(path.name)
            continue
        words_per_file.append(len(tokens))
        laugh_count += sum(1 for t in tokens if t == "#")
        frequencies.update(t for t in tokens if t != "#")

    if not tsv_files and not wav_files:
        print(f"warning: no .tsv or .wav files under {data_dir}", file=sys.stderr)

    top = frequencies.most_common(args.top_k)
    report = {
        "files": {"tsv": len(tsv_files), "wav": len(wav_files)},
        "total_duration_seconds": float(sum(durations)),
        "duration_histogram": _histogram(durations),
        "words_per_file_histogram": _histogram([float(w) for w in words_per_file]),
        "max_words_in_file": max(words_per_file, default=0),
        "top_words": [{"word": w, "count": c} for w, c in top],
        "laugh_tokens": laugh_count,
        "total_words": int(sum(frequencies.values())),
        "unreadable": sorted(unreadable),
    }
    if args.out_json:
        _write_json(Path(args.out_json), report)

    print(f"files: {len(tsv_files)} transcripts, {len(wav_files)} wavs"
          + (f", total audio {sum(durations):.1f}s" if durations else ""))
    if words_per_file:
        print(f"words per file: max {max(words_per_file)}, total {sum(words_per_file)}")
    print(f"laugh tokens ('#'): {laugh_count}")
    for word, count in top:
        print(f"  {word}: {count}")
    if unreadable:
        print("unreadable files: " + ", ".join(sorted(unreadable)), file=sys.stderr)
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gesturediff",
        description="Diffusion-based co-speech gesture generation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="extract gesture/audio/text features")
    p.add_argument("--wav", required=True, help="mono or stereo RIFF PCM audio")
    p.add_argument("--tsv", required=True, help="start\\tend\\tword transcript")
    p.add_argument("--bvh", required=True, help="motion capture file")
    p.add_argument("--speaker", required=True, type=int, help="speaker id 0..16")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lexicon", help="word-embedding table (word v1 .. v300 per line)")
    p.add_argument("--embedding-sidecar", help="precomputed GDF1 audio embedding block")
    p.add_argument("--stem", help="output file stem (defaults to the bvh stem)")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train the gesture denoiser")
    p.add_argument("--data-dir", required=True, help="directory of extracted features")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--config", help="flat key=value run config")
    p.add_argument("--layout", default="split",
                   choices=[l.value for l in AblationLayout])
    p.add_argument("--stride", type=int, default=30, help="clip window stride")
    p.add_argument("--loss-csv", help="loss curve path (default: beside checkpoint)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="synthesize gestures as BVH")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--tsv", required=True)
    p.add_argument("--speaker", required=True, type=int)
    p.add_argument("--out-bvh", required=True)
    p.add_argument("--seed-bvh", help="first 30 frames become the seed gesture")
    p.add_argument("--skeleton-bvh", help="skeleton source when no --seed-bvh is given")
    p.add_argument("--gamma", type=float, default=0.0, help="speaker-style guidance scale")
    p.add_argument("--rng-seed", type=int, default=None)
    p.add_argument("--lexicon")
    p.add_argument("--embedding-sidecar")
    p.add_argument("--features-out", help="also dump standardized features as GDF1")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate-fgd", help="Frechet gesture distances between corpora")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--autoencoder", help="GDP1 checkpoint (trained if missing)")
    p.add_argument("--ae-epochs", type=int, default=40)
    p.add_argument("--ae-window-stride", type=int, default=15)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_evaluate_fgd)

    p = sub.add_parser("ablation", help="conditioning-layout comparison with FGD")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--config")
    p.add_argument("--stride", type=int, default=30)
    p.add_argument("--eval-every", type=int, default=4,
                   help="every n-th clip is held out for evaluation")
    p.add_argument("--ae-epochs", type=int, default=40)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("corpus-stats", help="transcript/audio corpus statistics")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--workers", type=int, default=4, help="per-file parse parallelism")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_corpus_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, BvhParseError, SidecarFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
