"""Synthetic speciality/versatility workloads, a character tokenizer and the
instruction prompt template."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import UnknownSymbol, UnknownToken
from .tensor import SeededRng

PAD, BOS, EOS = 0, 1, 2

class Vocabulary:
    """PAD/BOS/EOS, newline, then printable ASCII (space..tilde)."""

    def __init__(self):
        self.symbols = ["<pad>", "<bos>", "<eos>", "\n"] + [chr(c) for c in range(32, 127)]
        self._ids = {s: i for i, s in enumerate(self.symbols) if i > EOS}

    def __len__(self):
        return len(self.symbols)

    def tokenize(self, text: str) -> list[int]:
        try:
            return [self._ids[ch] for ch in text]
        except KeyError as e:
            raise UnknownSymbol(f"character {e.args[0]!r} not in vocabulary") from None

    def detokenize(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i <= EOS or i >= len(self.symbols):
                raise UnknownToken(f"token id {i} has no text form")
            out.append(self.symbols[i])
        return "".join(out)


VOCAB = Vocabulary()


def tokenize(text: str) -> list[int]:
    return VOCAB.tokenize(text)


def detokenize(ids) -> str:
    return VOCAB.detokenize(ids)


PREAMBLE = ("Below is an instruction that describes a task. "
            "Write a response that appropriately completes the request.")
TEMPLATES = ("alpaca", "compact")


@dataclass(frozen=True)
class Example:
    instruction: str
    input: str = ""
    output: str = ""
    template: str = "alpaca"  # prompt layout, see build_prompt

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown prompt template {self.template!r}; expected one of {TEMPLATES}")

    def to_json(self) -> dict:
        d = asdict(self)
        if self.template == "alpaca":
            del d["template"]
        return d


@dataclass(frozen=True)
class ChoiceItem:
    """Multiple-choice item: the prompt is built from ``example`` with the
    response slot empty; each option is a candidate response."""

    example: Example
    options: tuple[str, ...]
    answer: int
    subtask: str = ""

    def to_json(self) -> dict:
        d = self.example.to_json()
        d["output"] = self.options[self.answer]
        d.update(options=list(self.options), answer=self.answer, subtask=self.subtask)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ChoiceItem":
        return cls(Example(d["instruction"], d.get("input", ""), "", d.get("template", "alpaca")),
                   tuple(d["options"]), int(d["answer"]), d.get("subtask", ""))


def build_prompt(e: Example, include_output: bool = True) -> str:
    """Render ``e`` with its template.

    ``alpaca``: preamble, blank line, ``### Instruction:``, the instruction,
    the input on its own line when present, blank line, ``### Response: ``.
    ``compact``: ``I: <instruction>``, the input line, ``R: ``. Both end in
    the response slot, filled with the output when ``include_output``.
    """
    resp = e.output if include_output else ""
    if e.template == "compact":
        parts = ["I: " + e.instruction]
        if e.input:
            parts.append(e.input)
        return "\n".join(parts + ["R: " + resp])
    body = "### Instruction:\n" + e.instruction + ("\n" + e.input if e.input else "")
    return f"{PREAMBLE}\n\n{body}\n\n### Response: {resp}"


def encode_example(e: Example) -> tuple[list[int], list[bool]]:
    """BOS + prompt + output + EOS, and a mask selecting the response targets.

    ``mask[i]`` says whether token ``i`` is a training target (only output
    characters and the closing EOS are)."""
    prompt = [BOS] + tokenize(build_prompt(e, include_output=False))
    resp = tokenize(e.output) + [EOS]
    return prompt + resp, [False] * len(prompt) + [True] * len(resp)


# ---------------------------------------------------------------- suite

@dataclass(frozen=True)
class SuiteSizes:
    spec_train: int = 240
    spec_test: int = 40
    facts: int = 40
    rs_train: int = 80  # per reasoning subtask
    rs_test: int = 20  # per reasoning subtask
    instruct_train: int = 80
    instruct_test: int = 24

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"size {k} must be positive")


@dataclass(frozen=True)
class TaskConfig:
    modulus: int = 7
    operand_max: int = 29
    rs_len: tuple[int, int] = (3, 5)
    template: str = "alpaca"

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown prompt template {self.template!r}; expected one of {TEMPLATES}")


SPEC_TRAIN_TEMPLATES = (
    "Compute ({a}+{b}) mod {p}.",
    "Find the remainder of {a}+{b} divided by {p}.",
    "Work out {a} plus {b} modulo {p}.",
)
SPEC_TEST_TEMPLATES = (
    "What is ({a}+{b}) mod {p}?",
    "Give the value of {a}+{b} modulo {p}.",
)
RS_TASKS = ("reverse", "sort", "shift", "double")
RS_INSTRUCTIONS = {
    "reverse": "Reverse the letters.",
    "sort": "Sort the letters.",
    "shift": "Shift each letter forward by one.",
    "double": "Double each letter.",
}
COLORS = ("red", "blue", "green", "black", "white", "pink", "gray", "gold")
NAMES = ("ada", "bob", "cy", "dee", "eli", "fay", "gus", "hal", "ivy", "jo", "kim", "lu",
         "max", "ned", "ola", "pat", "quin", "rex", "sol", "tia")
WORDS = ("apple", "river", "stone", "cloud", "tiger", "bread", "light", "paper", "smile",
         "grass", "chair", "music", "ocean", "plant", "sugar", "train", "house", "lemon")
LETTERS = "abcdefghijklmnopqrstuvwxy"  # no z so "shift" stays inside a-z
CONS, VOWELS = "bdfgklmnprstv", "aeiou"


def spec_answer(a: int, b: int, p: int) -> str:
    s = a + b
    return f"{a}+{b}={s}, {s} mod {p} is {s % p}."


def rs_solve(task: str, w: str) -> str:
    if task == "reverse":
        return w[::-1]
    if task == "sort":
        return "".join(sorted(w))
    if task == "shift":
        return "".join(chr(ord(c) + 1) for c in w)
    if task == "double":
        return "".join(c + c for c in w)
    raise ValueError(task)


def _instruct_item(kind: int, rng: SeededRng) -> Example:
    if kind == 0:
        w = WORDS[rng.integers(0, len(WORDS))]
        return Example("Write the word in capital letters.", w, w.upper())
    if kind == 1:
        n = NAMES[rng.integers(0, len(NAMES))]
        return Example(f"Say hello to {n}.", "", f"Hello, {n}! Nice to meet you.")
    if kind == 2:
        a = int(rng.integers(1, 10))
        b = a + int(rng.integers(2, 6))
        return Example(f"Count from {a} to {b}.", "", ", ".join(str(i) for i in range(a, b + 1)))
    w = WORDS[rng.integers(0, len(WORDS))]
    if kind == 3:
        return Example("Repeat the word three times.", w, " ".join([w] * 3))
    if kind == 4:
        return Example("Spell the word with spaces.", w, " ".join(w))
    return Example("Name the first letter of the word.", w, f"The first letter is {w[0]}.")


@dataclass
class TaskSuite:
    speciality_train: list[Example]
    speciality_test: list[Example]
    facts: list[Example]
    gen_kn: list[ChoiceItem]
    gen_rs_train: list[Example]
    gen_rs: list[ChoiceItem]
    instruct_train: list[Example]
    instruct_test: list[Example]
    task: TaskConfig = field(default_factory=TaskConfig)

    def pretrain_mixture(self) -> list[Example]:
        return self.facts + self.gen_rs_train + self.instruct_train

    def gen_rs_subtasks(self) -> dict[str, list[ChoiceItem]]:
        out: dict[str, list[ChoiceItem]] = {t: [] for t in RS_TASKS}
        for it in self.gen_rs:
            out[it.subtask].append(it)
        return out


def _fact_key(rng: SeededRng) -> str:
    return "".join(
        [CONS[rng.integers(0, len(CONS))], VOWELS[rng.integers(0, len(VOWELS))],
         CONS[rng.integers(0, len(CONS))], VOWELS[rng.integers(0, len(VOWELS))]]
    )


def _distinct_options(correct: str, pool: list[str], rng: SeededRng) -> tuple[tuple[str, ...], int]:
    opts = [correct]
    for cand in pool:
        if cand not in opts:
            opts.append(cand)
        if len(opts) == 4:
            break
    if len(opts) < 4:
        raise ValueError("not enough distinct distractors")
    order = rng.permutation(4)
    shuffled = tuple(opts[i] for i in order)
    return shuffled, shuffled.index(correct)


def _rs_distractors(task: str, w: str, rng: SeededRng) -> list[str]:
    others = [rs_solve(t, w) for t in RS_TASKS if t != task]
    scrambled = []
    target = rs_solve(task, w)
    for k in range(6):
        perm = rng.derive(k).permutation(len(target))
        scrambled.append("".join(target[i] for i in perm))
    return others + scrambled


def generate_suite(seed: int, sizes: SuiteSizes = SuiteSizes(), task: TaskConfig = TaskConfig()) -> TaskSuite:
    """Pure function of (seed, sizes, task)."""
    root = SeededRng(seed, 0x5017E)
    p, amax = task.modulus, task.operand_max

    pairs = [(a, b) for a in range(amax + 1) for b in range(amax + 1)]
    order = root.derive(1).permutation(len(pairs))
    need = sizes.spec_train + sizes.spec_test
    if need > len(pairs):
        raise ValueError("operand range too small for requested speciality sizes")
    chosen = [pairs[i] for i in order[:need]]
    spec_train, spec_test = [], []
    for i, (a, b) in enumerate(chosen):
        if i < sizes.spec_train:
            tmpl = SPEC_TRAIN_TEMPLATES[i % len(SPEC_TRAIN_TEMPLATES)]
            spec_train.append(Example(tmpl.format(a=a, b=b, p=p), "", spec_answer(a, b, p)))
        else:
            tmpl = SPEC_TEST_TEMPLATES[i % len(SPEC_TEST_TEMPLATES)]
            spec_test.append(Example(tmpl.format(a=a, b=b, p=p), "", spec_answer(a, b, p)))

    rng = root.derive(2)
    keys: list[str] = []
    attempt = 0
    while len(keys) < sizes.facts:
        k = _fact_key(rng.derive(0x4B, attempt))
        attempt += 1
        if k not in keys:
            keys.append(k)
        elif attempt > 100 * sizes.facts:
            raise ValueError("fact key pool exhausted")
    facts, gen_kn = [], []
    for i, key in enumerate(keys):
        color = COLORS[int(rng.derive(i, 1).integers(0, len(COLORS)))]
        ex = Example(f"What color is the {key}?", "", f"The {key} is {color}.")
        facts.append(ex)
        pool_order = rng.derive(i, 2).permutation(len(COLORS))
        pool = [f"The {key} is {COLORS[j]}." for j in pool_order]
        opts, ans = _distinct_options(ex.output, pool, rng.derive(i, 3))
        gen_kn.append(ChoiceItem(Example(ex.instruction), opts, ans, "facts"))

    rng = root.derive(3)
    lo, hi = task.rs_len
    seen: set[str] = set()
    rs_train, gen_rs = [], []
    for t_i, t in enumerate(RS_TASKS):
        words: list[str] = []
        n = 0
        while len(words) < sizes.rs_train + sizes.rs_test:
            r = rng.derive(t_i, n)
            n += 1
            length = int(r.integers(lo, hi + 1))
            idx = r.permutation(len(LETTERS))[:length]  # distinct letters
            w = "".join(LETTERS[j] for j in idx)
            if w in seen:
                continue
            seen.add(w)
            words.append(w)
        for j, w in enumerate(words):
            ex = Example(RS_INSTRUCTIONS[t], w, rs_solve(t, w))
            if j < sizes.rs_train:
                rs_train.append(ex)
            else:
                opts, ans = _distinct_options(ex.output, _rs_distractors(t, w, rng.derive(t_i, 10_000 + j)),
                                              rng.derive(t_i, 20_000 + j))
                gen_rs.append(ChoiceItem(Example(ex.instruction, ex.input), opts, ans, t))

    rng = root.derive(4)
    instruct: list[Example] = []
    seen_i: set[Example] = set()
    n = 0
    while len(instruct) < sizes.instruct_train + sizes.instruct_test:
        ex = _instruct_item(n % 6, rng.derive(n))
        n += 1
        if ex in seen_i:
            if n > 100 * (sizes.instruct_train + sizes.instruct_test):
                raise ValueError("instruction pool exhausted")
            continue
        seen_i.add(ex)
        instruct.append(ex)

    def ex(items):
        return [replace(e, template=task.template) for e in items]

    def ch(items):
        return [replace(it, example=replace(it.example, template=task.template)) for it in items]

    return TaskSuite(
        speciality_train=ex(spec_train),
        speciality_test=ex(spec_test),
        facts=ex(facts),
        gen_kn=ch(gen_kn),
        gen_rs_train=ex(rs_train),
        gen_rs=ch(gen_rs),
        instruct_train=ex(instruct[: sizes.instruct_train]),
        instruct_test=ex(instruct[sizes.instruct_train :]),
        task=task,
    )


# ---------------------------------------------------------------- files

SUITE_FILES = {
    "speciality_train": "speciality_train.jsonl",
    "speciality_test": "speciality_test.jsonl",
    "facts": "facts.jsonl",
    "gen_kn": "gen_kn_test.jsonl",
    "gen_rs_train": "gen_rs_train.jsonl",
    "gen_rs": "gen_rs_test.jsonl",
    "instruct_train": "instruct_train.jsonl",
    "instruct_test": "instruct_test.jsonl",
}
_CHOICE_FIELDS = {"gen_kn", "gen_rs"}


def write_jsonl(path: str | Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_examples(path: str | Path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(Example(d["instruction"], d.get("input", ""), d.get("output", ""),
                                   d.get("template", "alpaca")))
    return out


def read_choices(path: str | Path) -> list[ChoiceItem]:
    with open(path, encoding="utf-8") as fh:
        return [ChoiceItem.from_json(json.loads(line)) for line in fh if line.strip()]


def save_suite(suite: TaskSuite, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for attr, fname in SUITE_FILES.items():
        write_jsonl(out_dir / fname, getattr(suite, attr))
        written[attr] = out_dir / fname
    (out_dir / "task.json").write_text(json.dumps(asdict(suite.task), sort_keys=True) + "\n")
    return written


def load_suite(data_dir: str | Path) -> TaskSuite:
    data_dir = Path(data_dir)
    kw = {}
    for attr, fname in SUITE_FILES.items():
        reader = read_choices if attr in _CHOICE_FIELDS else read_examples
        kw[attr] = reader(data_dir / fname)
    task_path = data_dir / "task.json"
    if task_path.exists():
        t = json.loads(task_path.read_text())
        t["rs_len"] = tuple(t["rs_len"])
        kw["task"] = TaskConfig(**t)
    return TaskSuite(**kw)
