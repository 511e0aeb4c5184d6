"""BVH motion-capture parsing, writing, and forward kinematics.

The hierarchy is flattened to a topologically sorted joint list (parents
before children). "End Site" nodes are kept in the list, flagged, and carry
no channels; they never contribute motion features but are needed to write
structurally identical files back out.

Angles are degrees and offsets/positions centimeters, as stored in the files.
All types are immutable after construction; functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import euler_to_rotmat


class BvhParseError(ValueError):
    """Malformed BVH document; message carries the offending line number."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent_index: int | None
    offset: np.ndarray  # (3,) centimeters
    channel_labels: tuple[str, ...]  # e.g. ('Zrotation', 'Xrotation', 'Yrotation')
    is_end_site: bool = False

    @property
    def rotation_order(self) -> tuple[str, ...]:
        return tuple(ch for ch in self.channel_labels if ch.endswith("rotation"))

    @property
    def position_labels(self) -> tuple[str, ...]:
        return tuple(ch for ch in self.channel_labels if ch.endswith("position"))


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    channel_offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        offsets = []
        total = 0
        for idx, joint in enumerate(self.joints):
            if idx == 0:
                if joint.parent_index is not None:
                    raise ValueError("joint 0 must be the root (parent_index None)")
                if len(joint.rotation_order) != 3 or len(joint.position_labels) != 3:
                    raise ValueError("root must carry 3 position + 3 rotation channels")
            else:
                if joint.parent_index is None or joint.parent_index >= idx:
                    raise ValueError(f"joint {idx} ({joint.name}): parents must precede children")
                if joint.is_end_site:
                    if joint.channel_labels:
                        raise ValueError(f"end site {joint.name} must not carry channels")
                elif len(joint.channel_labels) != 3 or len(joint.rotation_order) != 3:
                    raise ValueError(f"joint {joint.name} must carry exactly 3 rotation channels")
            offsets.append(total)
            total += len(joint.channel_labels)
        object.__setattr__(self, "channel_offsets", tuple(offsets))

    @property
    def n_channels(self) -> int:
        last = self.joints[-1]
        return self.channel_offsets[-1] + len(last.channel_labels)

    def channel_slice(self, joint_index: int) -> slice:
        start = self.channel_offsets[joint_index]
        return slice(start, start + len(self.joints[joint_index].channel_labels))

    def articulated_indices(self) -> list[int]:
        """Indices of non-End-Site joints, in hierarchy order."""
        return [i for i, j in enumerate(self.joints) if not j.is_end_site]

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name and not j.is_end_site:
                return i
        raise KeyError(f"no joint named {name!r}")


@dataclass(frozen=True)
class MotionSequence:
    fps: int
    frames: np.ndarray  # (T, C) channel values; degrees / centimeters

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(f"frames must be a (T >= 1, C) matrix, got shape {frames.shape}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class FkResult:
    positions: np.ndarray  # (T, J, 3) global joint positions
    global_rotations: np.ndarray  # (T, J, 3, 3)
    local_rotations: np.ndarray  # (T, J, 3, 3); identity for end sites


class _TokenStream:
    """Whitespace tokens with line tracking for parse errors."""

    def __init__(self, text: str):
        self.tokens: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.tokens.append((tok, lineno))
        self.pos = 0

    @property
    def line(self) -> int:
        if self.pos < len(self.tokens):
            return self.tokens[self.pos][1]
        return self.tokens[-1][1] if self.tokens else 0

    def peek(self) -> str | None:
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def next(self, expected: str | None = None) -> str:
        if self.pos >= len(self.tokens):
            raise BvhParseError(f"line {self.line}: unexpected end of document"
                                + (f", expected {expected!r}" if expected else ""))
        tok, lineno = self.tokens[self.pos]
        self.pos += 1
        if expected is not None and tok.upper() != expected.upper():
            raise BvhParseError(f"line {lineno}: expected {expected!r}, got {tok!r}")
        return tok

    def next_float(self, what: str) -> float:
        tok = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BvhParseError(f"line {self.line}: non-numeric {what}: {tok!r}") from None

    def next_int(self, what: str) -> int:
        tok = self.next()
        try:
            return int(tok)
        except ValueError:
            raise BvhParseError(f"line {self.line}: non-integer {what}: {tok!r}") from None


_VALID_CHANNELS = {
    "Xposition", "Yposition", "Zposition",
    "Xrotation", "Yrotation", "Zrotation",
}


def _parse_joint(ts: _TokenStream, joints: list[Joint], parent: int | None) -> None:
    kw = ts.next().upper()
    if kw == "END":  # "End Site"
        ts.next("Site")
        name = joints[parent].name + "_end" if parent is not None else "end"
        ts.next("{")
        ts.next("OFFSET")
        offset = np.array([ts.next_float("offset") for _ in range(3)])
        joints.append(Joint(name, parent, offset, (), is_end_site=True))
        ts.next("}")
        return
    if kw not in ("ROOT", "JOINT"):
        raise BvhParseError(f"line {ts.line}: expected ROOT, JOINT or End Site, got {kw!r}")
    if kw == "ROOT" and parent is not None:
        raise BvhParseError(f"line {ts.line}: ROOT inside hierarchy")

    name = ts.next()
    ts.next("{")
    ts.next("OFFSET")
    offset = np.array([ts.next_float("offset") for _ in range(3)])
    ts.next("CHANNELS")
    n_ch = ts.next_int("channel count")
    labels = []
    for _ in range(n_ch):
        label = ts.next()
        if label not in _VALID_CHANNELS:
            raise BvhParseError(f"line {ts.line}: unknown channel label {label!r}")
        labels.append(label)

    expected = 6 if parent is None else 3
    if n_ch != expected:
        raise BvhParseError(
            f"line {ts.line}: joint {name!r} declares {n_ch} channels, expected {expected}"
        )

    index = len(joints)
    joints.append(Joint(name, parent, offset, tuple(labels)))

    while True:
        tok = ts.peek()
        if tok is None:
            raise BvhParseError(f"line {ts.line}: unexpected end of hierarchy")
        if tok == "}":
            ts.next()
            return
        _parse_joint(ts, joints, index)


def parse_bvh(text: str) -> tuple[Skeleton, MotionSequence]:
    """Parse a BVH document into a skeleton and its channel data.

    fps is recovered as round(1 / frame_time). Raises :class:`BvhParseError`
    naming the offending line on malformed input.
    """
    ts = _TokenStream(text)
    ts.next("HIERARCHY")
    joints: list[Joint] = []
    _parse_joint(ts, joints, None)
    try:
        skeleton = Skeleton(tuple(joints))
    except ValueError as exc:
        raise BvhParseError(f"line {ts.line}: {exc}") from None

    ts.next("MOTION")
    ts.next("Frames:")
    n_frames = ts.next_int("frame count")
    if n_frames < 1:
        raise BvhParseError(f"line {ts.line}: frame count must be >= 1, got {n_frames}")
    # "Frame Time:" arrives as two tokens
    ts.next("Frame")
    ts.next("Time:")
    frame_time = ts.next_float("frame time")
    if frame_time <= 0:
        raise BvhParseError(f"line {ts.line}: frame time must be positive, got {frame_time}")

    # Remaining tokens are frame rows, one line per frame.
    n_channels = skeleton.n_channels
    row_tokens: dict[int, list[str]] = {}
    while ts.peek() is not None:
        lineno = ts.line
        row_tokens.setdefault(lineno, []).append(ts.next())
    if len(row_tokens) != n_frames:
        raise BvhParseError(
            f"line {ts.line}: expected {n_frames} frame rows, found {len(row_tokens)}"
        )
    rows = np.empty((n_frames, n_channels), dtype=np.float64)
    for f, (lineno, toks) in enumerate(sorted(row_tokens.items())):
        if len(toks) != n_channels:
            raise BvhParseError(
                f"line {lineno}: frame row has {len(toks)} values, "
                f"skeleton declares {n_channels} channels"
            )
        try:
            rows[f] = [float(t) for t in toks]
        except ValueError:
            raise BvhParseError(f"line {lineno}: non-numeric frame data") from None

    fps = round(1.0 / frame_time)
    return skeleton, MotionSequence(fps=fps, frames=rows)


def write_bvh(skeleton: Skeleton, motion: MotionSequence) -> str:
    """Serialize skeleton + motion back to BVH text.

    Frame time is printed as 1/fps with 7 decimal places; channel values with
    6 decimal places, so a write/parse round trip agrees within 1e-4.
    """
    if motion.frames.shape[1] != skeleton.n_channels:
        raise ValueError(
            f"motion has {motion.frames.shape[1]} channels, skeleton expects {skeleton.n_channels}"
        )
    if not np.all(np.isfinite(motion.frames)):
        raise ValueError("non-finite channel values")

    children: dict[int | None, list[int]] = {}
    for idx, joint in enumerate(skeleton.joints):
        children.setdefault(joint.parent_index, []).append(idx)

    lines = ["HIERARCHY"]

    def emit(idx: int, depth: int) -> None:
        joint = skeleton.joints[idx]
        pad = "\t" * depth
        if joint.is_end_site:
            lines.append(f"{pad}End Site")
            lines.append(f"{pad}{{")
            lines.append(f"{pad}\tOFFSET " + " ".join(f"{v:.6f}" for v in joint.offset))
            lines.append(f"{pad}}}")
            return
        kw = "ROOT" if joint.parent_index is None else "JOINT"
        lines.append(f"{pad}{kw} {joint.name}")
        lines.append(f"{pad}{{")
        lines.append(f"{pad}\tOFFSET " + " ".join(f"{v:.6f}" for v in joint.offset))
        lines.append(
            f"{pad}\tCHANNELS {len(joint.channel_labels)} " + " ".join(joint.channel_labels)
        )
        for child in children.get(idx, []):
            emit(child, depth + 1)
        lines.append(f"{pad}}}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {motion.n_frames}")
    lines.append(f"Frame Time: {1.0 / motion.fps:.7f}")
    for row in motion.frames:
        lines.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def forward_kinematics(skeleton: Skeleton, motion: MotionSequence) -> FkResult:
    """Global positions and rotations for every joint in every frame.

    p_j = p_parent + R_parent_global @ offset_j, R_j_global = R_parent_global
    @ R_j_local; the root position comes from its position channels. End
    sites get identity local rotation.
    """
    if motion.frames.shape[1] != skeleton.n_channels:
        raise ValueError(
            f"motion has {motion.frames.shape[1]} channels, skeleton expects {skeleton.n_channels}"
        )
    n_frames = motion.n_frames
    n_joints = len(skeleton.joints)
    positions = np.zeros((n_frames, n_joints, 3))
    global_rot = np.zeros((n_frames, n_joints, 3, 3))
    local_rot = np.zeros((n_frames, n_joints, 3, 3))

    for idx, joint in enumerate(skeleton.joints):
        values = motion.frames[:, skeleton.channel_slice(idx)]
        if joint.is_end_site:
            local = np.broadcast_to(np.eye(3), (n_frames, 3, 3))
        else:
            rot_cols = [c for c, lbl in enumerate(joint.channel_labels) if lbl.endswith("rotation")]
            local = euler_to_rotmat(values[:, rot_cols], joint.rotation_order)
        local_rot[:, idx] = local

        if joint.parent_index is None:
            pos = np.zeros((n_frames, 3))
            for c, lbl in enumerate(joint.channel_labels):
                if lbl.endswith("position"):
                    pos[:, "XYZ".index(lbl[0])] = values[:, c]
            positions[:, idx] = pos
            global_rot[:, idx] = local
        else:
            parent_rot = global_rot[:, joint.parent_index]
            positions[:, idx] = positions[:, joint.parent_index] + np.einsum(
                "tij,j->ti", parent_rot, joint.offset
            )
            global_rot[:, idx] = parent_rot @ local

    return FkResult(positions=positions, global_rotations=global_rot, local_rotations=local_rot)
