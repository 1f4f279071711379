"""
Prompt templates for the LLM cleaner and the translation (SFT) format.

Both layouts are byte-exact, trailing spaces included, so they are assembled
from explicit line lists instead of indented literals.
"""
from typing import Dict, List

FEW_SHOT_SLOT = "[Few-shot prompt]"
BATCH_SLOT = "[Batch-prompt]"

CLEANER_TEMPLATE = "\n".join([
    "You are an expert in aligning and cleaning parallel sentences in different ",
    "languages. You will receive two sentences: one in a source language and ",
    "one in a target language.",
    "",
    "Your task is:",
    '1. On the first line, respond with "True" if the sentences have the same ',
    'meaning, otherwise respond with "False".',
    '2. If the first line is "True", provide the cleaned and aligned sentences',
    "on the second and third lines respectively by fixing syntax errors, removing ",
    "noise (such as unnecessary phrases, punctuation or ambiguous ",
    "numbers), and normalizing text (e.g., capitalization).",
    "",
    "Here are some examples to guide you:",
    FEW_SHOT_SLOT,
    "",
    "Now, clean the following sentence pairs:",
    BATCH_SLOT,
])

CLEANER_TEMPLATE_VERSION = "cleaner-v1"

# Worked examples shown to the cleaner: one misaligned pair, one noisy aligned pair.
DEFAULT_FEW_SHOTS: List[Dict] = [
    {
        "src_lang": "id",
        "tgt_lang": "ban",
        "src_text": "Dengan harga yang bisa dibilang menengah, apa saja yang ditwarkannya?",
        "tgt_text": "Suratan puniki nénten indik Kabupatén miwah kota ring Kepulauan Riau.",
        "aligned": False,
    },
    {
        "src_lang": "id",
        "tgt_lang": "ban",
        "src_text": "Bahasa daerah memiliki karakteristik yang unik.",
        "tgt_text": '(32:2) Basa daerah madue "karakteristik" sane soleh.',
        "aligned": True,
        "cleaned_src": "Bahasa daerah memiliki karakteristik yang unik.",
        "cleaned_tgt": "Basa daerah madue karakteristik sane soleh.",
    },
]

TRANSLATION_HEADER = "Translate this from {src} to {tgt}: "


def single_line(text: str) -> str:
    return " ".join(text.splitlines())


def get_pair_block(src_name: str, src_text: str, tgt_name: str, tgt_text: str) -> str:
    """Two lines, ``<SrcName>: <text>`` then ``<TgtName>: <text>``."""
    return f"{src_name}: {single_line(src_text)}\n{tgt_name}: {single_line(tgt_text)}"


def get_answer_block(aligned: bool, src_name: str = "", cleaned_src: str = "",
                     tgt_name: str = "", cleaned_tgt: str = "") -> str:
    if not aligned:
        return "False"
    return f"True\n{get_pair_block(src_name, cleaned_src, tgt_name, cleaned_tgt)}"


def get_few_shot_section(pair_blocks: List[str], answer_blocks: List[str]) -> str:
    """Example inputs first, then their answers, every block separated by a blank line."""
    return "\n\n".join(pair_blocks + answer_blocks)


def get_cleaner_prompt(few_shot_section: str, batch_section: str) -> str:
    return CLEANER_TEMPLATE.replace(FEW_SHOT_SLOT, few_shot_section).replace(BATCH_SLOT, batch_section)


def get_translation_prompt(src_name: str, tgt_name: str, source_text: str) -> str:
    """Everything up to and including the target-language header line."""
    return "\n".join([
        TRANSLATION_HEADER.format(src=src_name, tgt=tgt_name),
        f"{src_name}: {source_text}",
        f"{tgt_name}:",
    ])
