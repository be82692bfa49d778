"""Template-generated narrative corpus for offline, desk-scale experiments.

Each document follows one protagonist through an ordered activity: an
introduction naming the person and goal, a chain of step sentences tied
together by ordinal connectives and pronouns, and a closing sentence.
Shuffling the sentences breaks the connective order and the name-before-
pronoun chain, so sentence order carries a strong learnable signal.
"""

from __future__ import annotations

import random

from cohscore.corpus import Corpus, Document

_PEOPLE = [
    ("Maria", "she", "her"),
    ("James", "he", "his"),
    ("Elena", "she", "her"),
    ("Victor", "he", "his"),
    ("Aisha", "she", "her"),
    ("Noah", "he", "his"),
    ("Ingrid", "she", "her"),
    ("Tomas", "he", "his"),
    ("Priya", "she", "her"),
    ("Felix", "he", "his"),
]

_CONNECTIVES = [
    "First,",
    "Then",
    "Next,",
    "After that,",
    "Soon after,",
    "Later,",
    "Afterwards,",
    "Eventually,",
]

_ADJECTIVES = ["old", "small", "heavy", "quiet", "bright", "narrow", "worn", "clean"]

# Each activity: (goal phrase, ordered step templates, closing templates).
# Steps use {pro} for the subject pronoun and {adj} for a sampled adjective.
_ACTIVITIES = [
    (
        "wanted to bake a loaf of bread for the village fair",
        [
            "{pro} measured the flour into a {adj} wooden bowl.",
            "{pro} mixed the yeast with warm water and a spoon of honey.",
            "{pro} kneaded the dough on the {adj} kitchen counter.",
            "{pro} left the dough to rise beside the window.",
            "{pro} shaped the loaf and brushed it with melted butter.",
            "{pro} slid the tray into the {adj} oven.",
            "{pro} watched the crust turn a deep golden brown.",
            "{pro} tapped the loaf to hear the hollow finished sound.",
            "{pro} set the bread on a rack to cool.",
            "{pro} wrapped the cooled loaf in a linen cloth.",
        ],
        [
            "That evening the whole house smelled of fresh bread.",
            "By nightfall the loaf was ready for the fair.",
        ],
    ),
    (
        "decided to repair the broken bicycle in the shed",
        [
            "{pro} wheeled the bicycle out into the {adj} yard.",
            "{pro} flipped the frame over onto its saddle.",
            "{pro} pulled the punctured tube out of the rear tyre.",
            "{pro} patched the hole with glue and a rubber strip.",
            "{pro} pumped the tyre firm and checked the valve.",
            "{pro} oiled the chain until it ran without squeaking.",
            "{pro} tightened the {adj} brake cables with a small wrench.",
            "{pro} spun the wheels to test the repair.",
            "{pro} rode one slow lap around the block.",
            "{pro} hung the tools back on the shed wall.",
        ],
        [
            "The bicycle rolled as smoothly as the day it was bought.",
            "By sunset the shed held a working bicycle again.",
        ],
    ),
    (
        "set out to paint a mural on the schoolyard wall",
        [
            "{pro} swept the dust off the {adj} brick wall.",
            "{pro} sketched the outline in pale chalk lines.",
            "{pro} opened the cans and stirred each colour.",
            "{pro} painted the wide blue band of the sky.",
            "{pro} added the {adj} hills along the bottom edge.",
            "{pro} filled in a row of small dancing figures.",
            "{pro} traced the fine details with a thin brush.",
            "{pro} stepped back to judge the balance of colours.",
            "{pro} signed a tiny name in the corner.",
            "{pro} rinsed the brushes under the outdoor tap.",
        ],
        [
            "The children cheered when they saw the finished wall.",
            "The mural dried slowly in the afternoon sun.",
        ],
    ),
    (
        "planned to plant a vegetable garden behind the house",
        [
            "{pro} marked out four {adj} beds with string and pegs.",
            "{pro} turned the soil with a rusty garden fork.",
            "{pro} raked out the stones and broken roots.",
            "{pro} sowed neat rows of carrot and beet seed.",
            "{pro} pressed young tomato plants into the {adj} earth.",
            "{pro} watered every bed with a tin can.",
            "{pro} staked the climbing beans against the fence.",
            "{pro} spread straw between the rows to keep the damp in.",
            "{pro} hung a bright ribbon to scare away the crows.",
            "{pro} stacked the empty pots beside the gate.",
        ],
        [
            "Weeks later the first green shoots broke the surface.",
            "The garden promised a full table by autumn.",
        ],
    ),
    (
        "offered to cook a festival dinner for the neighbours",
        [
            "{pro} wrote a long shopping list at the {adj} table.",
            "{pro} carried two full baskets back from the market.",
            "{pro} chopped the onions and wiped away tears.",
            "{pro} simmered the broth in the {adj} copper pot.",
            "{pro} rolled out dumplings on the floured board.",
            "{pro} seasoned the stew and tasted it twice.",
            "{pro} laid the long table with borrowed plates.",
            "{pro} lit a row of candles down the middle.",
            "{pro} rang the bell to call everyone in.",
            "{pro} ladled the first serving for the oldest guest.",
        ],
        [
            "The neighbours stayed and talked long after midnight.",
            "Not a single bowl was left unfinished.",
        ],
    ),
    (
        "agreed to build a bookshelf for the town library",
        [
            "{pro} measured the alcove twice with a folding rule.",
            "{pro} sawed the {adj} pine boards to length.",
            "{pro} sanded every edge until it was smooth.",
            "{pro} drilled the holes for the shelf pegs.",
            "{pro} glued and clamped the {adj} frame overnight.",
            "{pro} screwed the back panel into place.",
            "{pro} varnished the wood with slow even strokes.",
            "{pro} carried the shelf through the library doors.",
            "{pro} filled the lowest shelf with returned novels.",
            "{pro} dusted the counter and swept the sawdust away.",
        ],
        [
            "The librarian declared it the finest shelf in the building.",
            "Readers filled the new shelf within a week.",
        ],
    ),
]


def make_synthetic_document(
    doc_id: str,
    rng: random.Random,
    min_sentences: int = 6,
    max_sentences: int = 12,
) -> Document:
    """One narrative with ``n`` uniform in [min_sentences, max_sentences]."""
    if min_sentences < 3:
        raise ValueError("narratives need at least 3 sentences (intro, step, closing)")
    name, pronoun, possessive = rng.choice(_PEOPLE)
    goal, steps, closings = rng.choice(_ACTIVITIES)
    n = rng.randint(min_sentences, max_sentences)
    num_steps = min(n - 2, len(steps))
    sentences = [f"{name} {goal}."]
    for index in range(num_steps):
        connective = _CONNECTIVES[min(index, len(_CONNECTIVES) - 1)]
        body = steps[index].format(pro=pronoun.capitalize(), adj=rng.choice(_ADJECTIVES))
        # "First, She measured..." reads wrong; lower the pronoun after a connective
        sentences.append(f"{connective} {body[0].lower()}{body[1:]}")
    closing = rng.choice(closings).replace("the whole house", f"{possessive} whole house")
    sentences.append(f"Finally, {closing[0].lower()}{closing[1:]}")
    return Document.make(doc_id, sentences)


def make_synthetic_corpus(
    num_docs: int,
    seed: int = 0,
    min_sentences: int = 6,
    max_sentences: int = 12,
    split: str = "train",
) -> Corpus:
    """Deterministic corpus of ``num_docs`` template narratives."""
    if num_docs < 1:
        raise ValueError("num_docs must be >= 1")
    rng = random.Random(seed)
    documents = [
        make_synthetic_document(f"synth-{i:05d}", rng, min_sentences, max_sentences)
        for i in range(num_docs)
    ]
    return Corpus(documents, split=split)
