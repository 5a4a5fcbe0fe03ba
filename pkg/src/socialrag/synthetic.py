"""Deterministic synthetic xylazine/ketamine forum posts for demos and tests."""

from __future__ import annotations

import json
import random
from typing import Iterator

from .corpus import Post

_XYLAZINE = [
    "Xylazine is a horse tranquilizer that keeps showing up in the dope around here.",
    "The side effects of xylazine I noticed were heavy sedation and a really slow heart rate.",
    "Tranq gave me awful wounds on my skin that would not heal for months.",
    "Xylazine causes skin ulcers and the wounds get infected if you do not clean them.",
    "Rehab was harder because the xylazine withdrawal made me restless and anxious.",
    "Most detox programs in rehab do not know how to handle tranq withdrawal yet.",
    "Xylazine withdrawal felt like anxiety, sweating and irritability on top of opioid withdrawal.",
    "Fentanyl in Philly is almost always cut with xylazine now.",
    "Dealers mix xylazine with fentanyl and heroin to make the high last longer.",
    "Some pressed pills contain xylazine according to the test strips.",
    "Wound care and clonidine were the treatments that worked for my xylazine withdrawal.",
    "Doctors treat tranq wounds with dressings and antibiotics, surgery in bad cases.",
    "Philadelphia and other parts of the United States like the Northeast are hit hardest by xylazine.",
    "Xylazine has spread from Puerto Rico to cities across the United States.",
    "Compared to pure heroin, xylazine knocks you out for hours and leaves you with blackouts.",
    "Pure heroin never gave me wounds, xylazine is a different beast.",
    "The general sentiment about xylazine here is fear and anger at dealers.",
    "Everyone hates tranq and people feel scared about what is in the supply.",
    "Narcan or naloxone reverses the fentanyl but does not wake you from the xylazine sedation.",
    "Give naloxone anyway during an overdose because tranq is usually mixed with opioids.",
]

_KETAMINE = [
    "The side effects of ketamine for me were dissociation, nausea and blurry vision.",
    "Ketamine left me dizzy and gave me high blood pressure during the session.",
    "Ketamine withdrawal was mostly low mood, cravings and poor sleep for a couple of weeks.",
    "Coming off ketamine the withdrawal was more psychological than physical.",
    "K cramps feel like a stabbing pain in the stomach that comes in waves.",
    "K cramps are bladder and abdominal pain from heavy long term use.",
    "A k hole feels like leaving your body and floating through strange spaces.",
    "Users describe the k hole as total dissociation where you forget who you are.",
    "Ketamine infusions worked for my depression when nothing else did.",
    "My depression lifted for a few weeks after each ketamine treatment.",
    "People often combine ketamine recreationally with MDMA, cocaine or alcohol.",
    "Mixing ketamine with alcohol recreationally is dangerous because both depress breathing.",
    "Esketamine helped with my suicidal thoughts during treatment at the clinic.",
    "Studies suggest ketamine is effective for short term relief of suicidal behavior.",
    "Treating ketamine addiction took therapy, support groups and cutting off my dealer.",
    "Ketamine addiction treatment usually means counseling because there is no substitute drug.",
    "Yes, ketamine use can cause cramps, especially bladder cramps after daily use.",
    "Daily ketamine use caused painful cramps and I had to stop.",
]

_CHATTER = [
    "Same here honestly.",
    "lol same here, anyone around tonight?",
    "Same here, stay safe everyone.",
]

_TITLES = {
    "xylazine": ["Tranq question", "Xylazine experience", "Is there xylazine in everything now", "Need advice"],
    "ketamine": ["Ketamine experience", "K question", "Ketamine therapy", "Need advice"],
}

_START = 1546300800  # 2019-01-01
_END = 1703980800  # 2023-12-31


def synthetic_posts(n: int, seed: int = 0, long_fraction: float = 0.05, chatter_fraction: float = 0.1) -> list[Post]:
    """Generate ``n`` posts; roughly 75% xylazine and 25% ketamine.

    A small share are long (hundreds of words, several segments) and a small
    share are low-content chatter that the default mock script answers with
    the no-answer sentinel.
    """
    rng = random.Random(seed)
    posts = []
    for i in range(n):
        drug = "xylazine" if rng.random() < 0.75 else "ketamine"
        bank = _XYLAZINE if drug == "xylazine" else _KETAMINE
        roll = rng.random()
        if roll < chatter_fraction:
            body = f"{drug.capitalize()} again. " + rng.choice(_CHATTER)
        elif roll < chatter_fraction + long_fraction:
            body = " ".join(rng.choice(bank) for _ in range(rng.randint(40, 80)))
        else:
            body = " ".join(rng.sample(bank, rng.randint(2, 6)))
        posts.append(
            Post(
                id=f"{drug[0]}{i:06d}",
                title=rng.choice(_TITLES[drug]),
                body=body,
                created_utc=rng.randint(_START, _END),
                subreddit="opiates" if drug == "xylazine" else "ketamine",
            )
        )
    return posts


def synthetic_dump_lines(n: int, seed: int = 0, deleted_fraction: float = 0.05) -> Iterator[str]:
    """Reddit-dump-shaped JSON lines for :func:`synthetic_posts`, with some deleted records."""
    rng = random.Random(seed + 1)
    for post in synthetic_posts(n, seed):
        record = {
            "id": post.id,
            "title": post.title,
            "selftext": "[deleted]" if rng.random() < deleted_fraction else post.body,
            "created_utc": post.created_utc,
            "subreddit": post.subreddit,
        }
        yield json.dumps(record)
