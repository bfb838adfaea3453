"""Patch application, sandboxed test execution and prompt construction.

Each evaluation copies the bug's working tree into a private temporary
directory, splices the patch over the known buggy hunk, and runs the test
command there under a timeout with a scrubbed environment.
"""

from __future__ import annotations

import enum
import json
import os
import re
import shutil
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .candidates import PatchText
from .errors import ConfigError, HarnessError, NoPatchInCompletion

SUMMARY_LIMIT = 2048

DEFAULT_COMPILE_PATTERNS = (
    r"error:",
    r"\bSyntaxError\b",
    r"\bIndentationError\b",
    r"cannot find symbol",
    r"COMPILATION ERROR",
    r"[Cc]ompilation failed",
)

DEFAULT_FAILURE_PATTERNS = (
    r"^(FAIL|FAILED|ERROR)\b",
    r"\bFailed tests?:",
    r"expected .* but was",
    r"\b\w+(Error|Exception|Failure)\b",
    r"error:",
    r"^\s*assert\b",
)

ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "JAVA_HOME", "SYSTEMROOT")


class FeedbackKind(str, enum.Enum):
    PASS = "Pass"
    COMPILE_ERROR = "CompileError"
    TEST_FAILURE = "TestFailure"
    TIMEOUT = "Timeout"
    HARNESS_ERROR = "HarnessError"


@dataclass(frozen=True)
class Feedback:
    kind: FeedbackKind
    summary: str = ""
    exit_code: int = 0
    duration: float = 0.0

    @property
    def passed(self) -> bool:
        return self.kind is FeedbackKind.PASS

    def to_dict(self, with_duration: bool = False) -> dict:
        out = {"kind": self.kind.value, "summary": self.summary, "exit_code": self.exit_code}
        if with_duration:
            out["duration"] = self.duration
        return out


@dataclass(frozen=True)
class BugCase:
    id: str
    source_path: str
    hunk_start: int
    hunk_end: int
    buggy_hunk: str
    test_command: str
    workdir: Path
    context_radius: int = 5
    timeout: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "workdir", Path(self.workdir))
        if not 1 <= self.hunk_start <= self.hunk_end:
            raise ConfigError(f"bad hunk span {self.hunk_start}..{self.hunk_end}")

    @property
    def source_file(self) -> Path:
        return self.workdir / self.source_path

    def source_lines(self) -> list[str]:
        try:
            with open(self.source_file, encoding="utf-8", newline="") as fh:
                return fh.read().splitlines(keepends=True)
        except OSError as exc:
            raise HarnessError(f"cannot read {self.source_file}: {exc}") from exc

    def validate(self) -> None:
        lines = self.source_lines()
        if self.hunk_end > len(lines):
            raise ConfigError(f"hunk end {self.hunk_end} beyond file length {len(lines)}")
        if _hunk_text(lines, self.hunk_start, self.hunk_end) != _chomp(self.buggy_hunk):
            raise ConfigError(f"{self.source_path}: lines {self.hunk_start}-{self.hunk_end} "
                              "do not match buggy_hunk")

    def context(self) -> str:
        """The hunk with ``context_radius`` surrounding lines, hunk lines marked with ``>``."""
        lines = self.source_lines()
        lo = max(1, self.hunk_start - self.context_radius)
        hi = min(len(lines), self.hunk_end + self.context_radius)
        width = len(str(hi))
        out = []
        for no in range(lo, hi + 1):
            mark = ">" if self.hunk_start <= no <= self.hunk_end else " "
            out.append(f"{mark} {no:>{width}} | {_chomp(lines[no - 1])}")
        return "\n".join(out)


def load_manifest(path) -> BugCase:
    """Read a bug manifest JSON and check that the hunk matches the source.

    Relative ``workdir`` values (default: the manifest's directory) are
    resolved against the manifest location.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    missing = {"id", "source_path", "hunk_start", "hunk_end", "buggy_hunk", "test_command"} - set(data)
    if missing:
        raise ConfigError(f"manifest {path} lacks {sorted(missing)}")
    workdir = path.parent / data.get("workdir", ".")
    bug = BugCase(
        id=str(data["id"]),
        source_path=data["source_path"],
        hunk_start=int(data["hunk_start"]),
        hunk_end=int(data["hunk_end"]),
        buggy_hunk=data["buggy_hunk"],
        test_command=data["test_command"],
        workdir=workdir.resolve(),
        context_radius=int(data.get("context_radius", 5)),
        timeout=float(data.get("timeout_s", 60.0)),
    )
    bug.validate()
    return bug


def _chomp(line: str) -> str:
    if line.endswith("\r\n"):
        return line[:-2]
    if line.endswith("\n"):
        return line[:-1]
    return line


def _hunk_text(lines: Sequence[str], start: int, end: int) -> str:
    return _chomp("".join(lines[start - 1:end]))


# -- patch extraction ------------------------------------------------------

_FENCE_OPEN = re.compile(r"```[^\n`]*\n")


def _trim_blank_lines(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end:
        nl = text.find("\n", start, end)
        if nl == -1 or text[start:nl].strip():
            break
        start = nl + 1
    while start < end:
        nl = text.rfind("\n", start, end)
        if text[nl + 1:end].strip():
            break
        if nl == -1:
            return start, start
        end = nl
    if end > start and text[end - 1] == "\r":
        end -= 1
    return start, end


def extract_patch(completion: str, origin: str = "") -> PatchText:
    """Pull the replacement hunk out of a model completion.

    The first fenced code block wins (an unterminated fence runs to the end of
    the completion); otherwise the whole completion is used. Leading and
    trailing blank lines are dropped, indentation is kept.
    """
    m = _FENCE_OPEN.search(completion)
    if m:
        start = m.end()
        close = completion.find("```", start)
        end = close if close != -1 else len(completion)
        rule = "fence"
    else:
        start, end, rule = 0, len(completion), "whole"
    start, end = _trim_blank_lines(completion, start, end)
    text = completion[start:end]
    if not text.strip():
        raise NoPatchInCompletion("completion contains no patch text")
    return PatchText(text, origin, rule, start, end)


# -- application and execution ---------------------------------------------

@dataclass(frozen=True)
class PatchedTree:
    root: Path
    source: str


def splice(lines: Sequence[str], start: int, end: int, replacement: str) -> str:
    """Replace lines ``start..end`` (1-based, inclusive) with ``replacement``.

    The line ending of the last replaced line is carried over, so a hunk at
    the end of a file without a terminal newline stays without one.
    """
    last = lines[end - 1]
    ending = last[len(_chomp(last)):]
    body = _chomp(replacement) + ending
    return "".join(lines[:start - 1]) + body + "".join(lines[end:])


def apply_patch(bug: BugCase, patch: PatchText, sandbox_root=None) -> PatchedTree:
    """Copy ``bug.workdir`` to a fresh directory and splice ``patch`` into it."""
    lines = bug.source_lines()
    patched = splice(lines, bug.hunk_start, bug.hunk_end, patch.text)
    if sandbox_root is not None:
        Path(sandbox_root).mkdir(parents=True, exist_ok=True)
    try:
        root = Path(tempfile.mkdtemp(prefix=f"{_safe(bug.id)}-", dir=sandbox_root))
        tree = root / "tree"
        shutil.copytree(bug.workdir, tree, symlinks=True)
        with open(tree / bug.source_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(patched)
    except OSError as exc:
        raise HarnessError(f"cannot materialize patched tree: {exc}") from exc
    return PatchedTree(tree, patched)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)[:40] or "bug"


def scrubbed_env(extra: Sequence[str] = ()) -> dict[str, str]:
    keep = set(ENV_ALLOWLIST) | set(extra)
    return {k: v for k, v in os.environ.items() if k in keep}


def _truncate_bytes(text: str, limit: int) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[:limit].decode("utf-8", errors="ignore")


def summarize(output: str, patterns: Sequence[str], limit: int = SUMMARY_LIMIT) -> str:
    """Matching lines of ``output`` in order, or its tail when nothing matches."""
    compiled = [re.compile(p) for p in patterns]
    picked: list[str] = []
    for line in output.splitlines():
        if any(p.search(line) for p in compiled) and line not in picked:
            picked.append(line.rstrip())
    if not picked:
        picked = [ln.rstrip() for ln in output.strip().splitlines()[-20:]]
    return _truncate_bytes("\n".join(picked), limit)


def run_tests(
    bug: BugCase,
    patched_dir,
    *,
    timeout: Optional[float] = None,
    compile_patterns: Sequence[str] = DEFAULT_COMPILE_PATTERNS,
    failure_patterns: Sequence[str] = DEFAULT_FAILURE_PATTERNS,
    summary_limit: int = SUMMARY_LIMIT,
    env_allowlist: Sequence[str] = (),
) -> Feedback:
    """Run ``bug.test_command`` in ``patched_dir`` and classify the outcome.

    The command runs through the shell in its own process group, which is
    killed as a whole on timeout.
    """
    limit = bug.timeout if timeout is None else timeout
    patched_dir = Path(patched_dir)
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            bug.test_command, shell=True, cwd=patched_dir,
            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            text=True, errors="replace", env=scrubbed_env(env_allowlist),
            start_new_session=True,
        )
    except OSError as exc:
        raise HarnessError(f"cannot spawn test command: {exc}") from exc
    timed_out = False
    try:
        out, err = proc.communicate(timeout=limit)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
    duration = time.monotonic() - start
    output = (err or "") + ("\n" if err and out else "") + (out or "")
    output = output.replace(str(patched_dir), "<sandbox>")
    code = proc.returncode

    if timed_out:
        return Feedback(FeedbackKind.TIMEOUT, f"test command exceeded {limit:g}s timeout", code, duration)
    if code == 0:
        return Feedback(FeedbackKind.PASS, "", 0, duration)
    if any(re.search(p, output, re.MULTILINE) for p in compile_patterns):
        kind = FeedbackKind.COMPILE_ERROR
        summary = summarize(output, compile_patterns, summary_limit)
    else:
        kind = FeedbackKind.TEST_FAILURE
        summary = summarize(output, failure_patterns, summary_limit)
    return Feedback(kind, summary, code, duration)


class Harness:
    """Evaluates patches for one or more bugs, each in its own sandbox copy."""

    def __init__(self, sandbox_root=None, *, parallelism: int = 1,
                 summary_limit: int = SUMMARY_LIMIT,
                 compile_patterns: Sequence[str] = DEFAULT_COMPILE_PATTERNS,
                 failure_patterns: Sequence[str] = DEFAULT_FAILURE_PATTERNS,
                 env_allowlist: Sequence[str] = (), keep_trees: bool = False):
        self.sandbox_root = sandbox_root
        self.parallelism = max(1, parallelism)
        self.summary_limit = summary_limit
        self.compile_patterns = tuple(compile_patterns)
        self.failure_patterns = tuple(failure_patterns)
        self.env_allowlist = tuple(env_allowlist)
        self.keep_trees = keep_trees

    def evaluate(self, bug: BugCase, patch: PatchText) -> Feedback:
        try:
            tree = apply_patch(bug, patch, self.sandbox_root)
        except HarnessError as exc:
            return Feedback(FeedbackKind.HARNESS_ERROR, str(exc), -1, 0.0)
        try:
            return run_tests(bug, tree.root, compile_patterns=self.compile_patterns,
                             failure_patterns=self.failure_patterns,
                             summary_limit=self.summary_limit, env_allowlist=self.env_allowlist)
        except HarnessError as exc:
            return Feedback(FeedbackKind.HARNESS_ERROR, str(exc), -1, 0.0)
        finally:
            if not self.keep_trees:
                shutil.rmtree(tree.root.parent, ignore_errors=True)

    def evaluate_original(self, bug: BugCase) -> Feedback:
        return self.evaluate(bug, PatchText(bug.buggy_hunk, "original"))

    def evaluate_batch(self, bug: BugCase, patches: Sequence[PatchText]) -> list[Feedback]:
        """Evaluate concurrently; results come back in submission order."""
        if self.parallelism == 1 or len(patches) < 2:
            return [self.evaluate(bug, p) for p in patches]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(lambda p: self.evaluate(bug, p), patches))


# -- prompts -----------------------------------------------------------------

TEMPLATE_VERSION = "v1"
_PLACEHOLDER = re.compile(r"\{(code|feedback|context)\}")


def load_template(template_id: str = "default", template_dir=None) -> str:
    if template_dir is not None:
        candidate = Path(template_dir) / f"{template_id}.txt"
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    packaged = resources.files("tokenrepair") / "templates" / TEMPLATE_VERSION / f"{template_id}.txt"
    if packaged.is_file():
        return packaged.read_text(encoding="utf-8")
    raise ConfigError(f"unknown prompt template {template_id!r}")


def build_prompt(code: str, feedback: Feedback, template_id: str = "default", *,
                 context: str = "", template_dir=None) -> str:
    """Fill ``{code}``, ``{feedback}`` and ``{context}`` in the named template.

    Substitution is a single pass, so braces inside the code are left alone.
    """
    if feedback.passed:
        raise ValueError("a passing evaluation never needs a repair prompt")
    template = load_template(template_id, template_dir)
    values = {"code": code, "feedback": feedback.summary, "context": context}
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)
