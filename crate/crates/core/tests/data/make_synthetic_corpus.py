"""Regenerates synthetic_corpus.jsonl (1,000 documents over 60 days).

Ten themed vocabularies; theme prevalence drifts over time with two bursts.
Deterministic for a fixed seed.
"""
import json
import math
import random
from datetime import datetime, timedelta, timezone

SEED = 20240601
N_DOCS = 1000
DAYS = 60

THEMES = {
    "economy": "market inflation bank rates growth trade export tariff currency investors bonds stocks recession budget".split(),
    "weather": "storm rainfall flood typhoon drought heatwave forecast temperature wind humidity coast warning snow cyclone".split(),
    "sports": "match goal league coach striker season tournament stadium champion penalty referee squad final medal".split(),
    "health": "hospital vaccine virus patients doctors clinic outbreak infection treatment nurses symptoms epidemic dose ward".split(),
    "tech": "software chip startup smartphone network cloud robot algorithm data platform satellite battery semiconductor app".split(),
    "politics": "parliament election minister vote policy reform senate campaign cabinet opposition coalition ballot governor treaty".split(),
    "culture": "festival museum film concert novel painting theatre opera gallery poetry exhibition orchestra ballet heritage".split(),
    "science": "telescope genome particle fossil laboratory experiment galaxy molecule quantum climate species research physics asteroid".split(),
    "transport": "railway airport highway traffic subway bridge airline tunnel freight harbour train cargo runway commuters".split(),
    "education": "school university students teachers exam campus lecture curriculum scholarship graduates classroom tuition degree library".split(),
}
FILLER = "the a of and to in on for with that was were is are said report new today officials people week city".split()
SOURCES = ["daily-herald", "morning-post", "evening-wire"]


def weights(t):
    # t in [0, 1]
    names = list(THEMES)
    w = {n: 1.0 + 0.5 * math.sin(2 * math.pi * (t * (i % 3 + 1)) + i) for i, n in enumerate(names)}
    # bursts
    w["weather"] += 8.0 * math.exp(-((t - 0.3) / 0.03) ** 2)
    w["health"] += 6.0 * math.exp(-((t - 0.7) / 0.05) ** 2)
    return w


def main():
    rng = random.Random(SEED)
    origin = datetime(2024, 3, 1, tzinfo=timezone.utc)
    span = timedelta(days=DAYS).total_seconds()
    stamps = sorted(rng.uniform(0, span) for _ in range(N_DOCS))
    with open("synthetic_corpus.jsonl", "w", encoding="utf-8") as f:
        for i, s in enumerate(stamps):
            w = weights(s / span)
            names = list(w)
            main_theme = rng.choices(names, weights=[w[n] for n in names])[0]
            side = rng.choice([n for n in names if n != main_theme])
            words = []
            for _ in range(rng.randint(25, 45)):
                r = rng.random()
                if r < 0.6:
                    words.append(rng.choice(THEMES[main_theme]))
                elif r < 0.75:
                    words.append(rng.choice(THEMES[side]))
                else:
                    words.append(rng.choice(FILLER))
            ts = origin + timedelta(seconds=int(s))
            rec = {
                "id": f"doc-{i:04d}",
                "text": " ".join(words).capitalize() + ".",
                "timestamp": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "source": SOURCES[i % len(SOURCES)],
            }
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
