"""Synthetic multi-hop world: people, cities, bands and universities.

Every person paragraph links to a birth city, a band, a university and a
collaborator. Two-hop questions name a person and ask for an attribute found
only in a linked paragraph; with ``bridge_overlap=False`` the question and the
answer paragraph share no content term, so lexical retrieval alone cannot
reach the second hop. One-hop questions ask for an attribute stated in the
named entity's own paragraph. Comparison questions name two people and
expect yes or no.

Names are pseudo-words drawn from disjoint pools so that overlap is
controlled by construction; a post-generation scan enforces it.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Corpus, Paragraph, build_graph, write_corpus
from .errors import ConfigError, GenerationError
from .supervision import AnswerType, TrainingQuestion, write_questions
from .text import STOPWORDS, content_tokens, contains_answer

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

OCCUPATIONS = ("painter", "singer", "drummer", "poet", "sculptor", "guitarist",
               "composer", "dancer", "novelist", "violinist", "pianist", "harpist")

TWO_HOP = {
    "country": "Which nation contains the birthplace of {person}?",
    "label": "Which record label signed the ensemble featuring {person}?",
    "animal": "What creature represents the alma mater of {person}?",
}
TWO_HOP_OVERLAP = {
    "country": "Which nation contains {bridge}, the birthplace of {person}?",
    "label": "Which record label signed {bridge}, the ensemble featuring {person}?",
    "animal": "What creature represents {bridge}, the alma mater of {person}?",
}
ONE_HOP = {
    "birth_year": "In which year was {person} born?",
    "river": "Which river flows through {city}?",
    "formed": "In which year was {band} formed?",
}
COMPARISON = "Was {a} born before {b}?"

_TEMPLATE_WORDS = frozenset(
    w for t in (*TWO_HOP.values(), *TWO_HOP_OVERLAP.values(), *ONE_HOP.values(), COMPARISON,
                "is a born in performs with and studied at often collaborates with "
                "is a city in beside the river is a band formed in whose albums are "
                "released through university was established in its emblem is the "
                "also describes records yes no", *OCCUPATIONS)
    for w in content_tokens(t.replace("{", " ").replace("}", " ")))


@dataclass
class SyntheticConfig:
    num_articles: int = 2000
    paragraphs_per_article: int = 1
    vocabulary_size: int = 4000
    num_questions: int = 500
    num_test_questions: int = 500
    hop_mix: tuple = (0.3, 0.6, 0.1)  # one-hop, two-hop, comparison
    test_hop_mix: tuple = None  # defaults to hop_mix
    bridge_overlap: bool = False
    disjoint_entities: bool = True  # train and test questions use disjoint entity halves
    seed: int = 0

    def __post_init__(self):
        self.hop_mix = tuple(float(x) for x in self.hop_mix)
        if self.test_hop_mix is None:
            self.test_hop_mix = self.hop_mix
        self.test_hop_mix = tuple(float(x) for x in self.test_hop_mix)
        for mix in (self.hop_mix, self.test_hop_mix):
            if len(mix) != 3 or min(mix) < 0 or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
                raise ConfigError(f"hop mix {mix} must be three non-negative fractions summing to 1")
        if min(self.num_articles, self.paragraphs_per_article, self.vocabulary_size,
               self.num_questions) < 1 or self.num_test_questions < 0:
            raise ConfigError("synthetic counts must be >= 1")
        if self.num_articles < 8:
            raise ConfigError("need at least 8 articles")

    def to_record(self):
        return asdict(self)


@dataclass
class SyntheticData:
    corpus: Corpus
    train: list
    test: list
    config: SyntheticConfig
    kinds: dict = field(default_factory=dict)  # qid -> question kind

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "corpus": os.path.join(out_dir, "corpus.jsonl"),
            "train": os.path.join(out_dir, "train.jsonl"),
            "test": os.path.join(out_dir, "test.jsonl"),
        }
        write_corpus(self.corpus, paths["corpus"])
        write_questions(self.train, paths["train"])
        write_questions(self.test, paths["test"])
        with open(os.path.join(out_dir, "synthetic_config.json"), "w", encoding="utf-8") as fh:
            json.dump(self.config.to_record(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        return paths


def _word_pool(rng, count):
    """``count`` distinct capitalized pseudo-words avoiding template words."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    capacity = len(syllables) ** 2 + len(syllables) ** 3
    if count > capacity // 4:
        raise GenerationError(f"cannot draw {count} distinct pseudo-words")
    seen = set()
    out = []
    while len(out) < count:
        n = 2 if rng.random() < 0.5 else 3
        w = "".join(syllables[k] for k in rng.integers(0, len(syllables), size=n))
        if w in seen or w in STOPWORDS or w in _TEMPLATE_WORDS:
            continue
        seen.add(w)
        out.append(w.capitalize())
    return out


def _split_counts(total, fractions):
    counts = [int(math.floor(total * f)) for f in fractions]
    rem = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda k: (-(total * fractions[k] - counts[k]), k))
    for k in order[:rem]:
        counts[k] += 1
    return counts


def _entity_counts(n):
    n_city = max(2, round(0.15 * n))
    n_band = max(2, round(0.125 * n))
    n_univ = max(2, round(0.125 * n))
    n_person = n - n_city - n_band - n_univ
    if n_person < 2:
        raise GenerationError("too few articles for the entity mix")
    return n_person, n_city, n_band, n_univ


def gen_synthetic(config):
    """Generate the corpus plus train/test questions; deterministic per seed."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n_person, n_city, n_band, n_univ = _entity_counts(cfg.num_articles)
    n_country = max(2, n_city // 10)
    n_label = max(2, n_band // 6)
    n_animal = max(2, n_univ // 6)
    n_name = max(2, math.ceil(math.sqrt(n_person * 1.4)))
    n_filler = 60 if cfg.paragraphs_per_article > 1 else 0
    needed = (2 * n_name + n_city + n_country + n_city + 2 * n_band + n_label
              + n_univ + n_animal + n_filler)
    if needed > cfg.vocabulary_size:
        raise GenerationError(
            f"vocabulary of {cfg.vocabulary_size} too small; {needed} disjoint words needed")
    words = _word_pool(rng, needed)
    pools = {}
    pos = 0
    for name, k in (("first", n_name), ("last", n_name), ("city", n_city),
                    ("country", n_country), ("river", n_city), ("band", 2 * n_band),
                    ("label", n_label), ("univ", n_univ), ("animal", n_animal),
                    ("filler", n_filler)):
        pools[name] = words[pos:pos + k]
        pos += k

    # entities
    pairs = [(f, last) for f in pools["first"] for last in pools["last"]]
    pick = rng.choice(len(pairs), size=n_person, replace=False)
    persons = [f"{pairs[k][0]} {pairs[k][1]}" for k in sorted(pick.tolist())]
    cities = list(pools["city"])
    bands = [f"{pools['band'][2 * k]} {pools['band'][2 * k + 1]}" for k in range(n_band)]
    univs = [f"{w} University" for w in pools["univ"]]

    city_attr = {c: (pools["country"][int(rng.integers(n_country))], pools["river"][k])
                 for k, c in enumerate(cities)}
    band_attr = {b: (int(rng.integers(1950, 2015)), pools["label"][int(rng.integers(n_label))])
                 for b in bands}
    univ_attr = {u: (int(rng.integers(1700, 1990)), pools["animal"][int(rng.integers(n_animal))])
                 for u in univs}
    # with disjoint_entities, entities of each type split into two halves and
    # person links stay within a half; train questions use half 0, test half 1
    n_worlds = 2 if cfg.disjoint_entities else 1
    if n_person < 2 * n_worlds:
        raise GenerationError("too few person articles for the entity split")

    def half(items, w):
        return items[w::n_worlds]

    person_attr = {}
    for w in range(n_worlds):
        w_persons, w_cities = half(persons, w), half(cities, w)
        w_bands, w_univs = half(bands, w), half(univs, w)
        for k, p in enumerate(w_persons):
            other = int(rng.integers(len(w_persons) - 1))
            other += other >= k
            person_attr[p] = dict(
                occupation=OCCUPATIONS[int(rng.integers(len(OCCUPATIONS)))],
                year=int(rng.integers(1900, 2000)),
                city=w_cities[int(rng.integers(len(w_cities)))],
                band=w_bands[int(rng.integers(len(w_bands)))],
                univ=w_univs[int(rng.integers(len(w_univs)))],
                collaborator=w_persons[other],
            )

    texts = {}
    links = {}
    for p, a in person_attr.items():
        texts[p] = (f"{p} is a {a['occupation']} born in {a['year']} in {a['city']}. "
                    f"{p} performs with {a['band']} and studied at {a['univ']}. "
                    f"{p} often collaborates with {a['collaborator']}.")
        links[p] = (a["city"], a["band"], a["univ"], a["collaborator"])
    for c, (country, river) in city_attr.items():
        texts[c] = f"{c} is a city in {country} beside the {river} river."
        links[c] = ()
    for b, (year, label) in band_attr.items():
        texts[b] = f"{b} is a band formed in {year} whose albums are released through {label}."
        links[b] = ()
    for u, (year, animal) in univ_attr.items():
        texts[u] = f"{u} was established in {year}. Its emblem is the {animal}."
        links[u] = ()

    titles = sorted(texts)
    para_id = {}
    paragraphs = []
    for title in titles:
        para_id[title] = f"{title}/0"
        for j in range(cfg.paragraphs_per_article):
            if j == 0:
                text = texts[title]
                out = tuple(links[title])
            else:
                filler = " ".join(pools["filler"][int(i)]
                                  for i in rng.integers(0, n_filler, size=6)).lower()
                text = f"{title} also describes {filler}."
                out = ()
            paragraphs.append(Paragraph(f"{title}/{j}", title, j, text, out, j == 0))
    corpus = Corpus(paragraphs)
    graph = build_graph(corpus)

    # questions
    kinds = {}
    def world(w):
        return (half(persons, w), {c: city_attr[c] for c in half(cities, w)},
                {b: band_attr[b] for b in half(bands, w)})

    train = _questions("train", cfg.num_questions, cfg.hop_mix, cfg, rng, *world(0),
                       person_attr, city_attr, band_attr, univ_attr, para_id, kinds)
    test = _questions("test", cfg.num_test_questions, cfg.test_hop_mix, cfg, rng,
                      *world(n_worlds - 1), person_attr, city_attr, band_attr, univ_attr,
                      para_id, kinds)
    data = SyntheticData(corpus, train, test, cfg, kinds)
    check_synthetic(data, graph)
    return data


def _questions(split, total, mix, cfg, rng, persons, q_cities, q_bands, person_attr, city_attr,
               band_attr, univ_attr, para_id, kinds):
    """Questions about ``persons`` (and the one-hop subjects ``q_cities``/``q_bands``)."""
    n_one, n_two, n_cmp = _split_counts(total, mix)
    out = []
    relations = sorted(TWO_HOP)
    one_kinds = sorted(ONE_HOP)
    templates = TWO_HOP_OVERLAP if cfg.bridge_overlap else TWO_HOP

    def add(kind, question, answers, gold, bearing, atype):
        qid = f"{split}-{len(out):05d}"
        kinds[qid] = kind
        out.append(TrainingQuestion(qid, question, tuple(answers), tuple(gold), bearing, atype))

    for _ in range(n_two):
        p = persons[int(rng.integers(len(persons)))]
        rel = relations[int(rng.integers(len(relations)))]
        a = person_attr[p]
        if rel == "country":
            bridge, answer = a["city"], city_attr[a["city"]][0]
        elif rel == "label":
            bridge, answer = a["band"], band_attr[a["band"]][1]
        else:
            bridge, answer = a["univ"], univ_attr[a["univ"]][1]
        q = templates[rel].format(person=p, bridge=bridge)
        add("two-hop:" + rel, q, [answer], [para_id[p], para_id[bridge]], para_id[bridge],
            AnswerType.SPAN)
    for _ in range(n_one):
        kind = one_kinds[int(rng.integers(len(one_kinds)))]
        if kind == "birth_year":
            p = persons[int(rng.integers(len(persons)))]
            title, answer = p, str(person_attr[p]["year"])
            q = ONE_HOP[kind].format(person=p)
        elif kind == "river":
            city = sorted(q_cities)[int(rng.integers(len(q_cities)))]
            title, answer = city, city_attr[city][1]
            q = ONE_HOP[kind].format(city=city)
        else:
            band = sorted(q_bands)[int(rng.integers(len(q_bands)))]
            title, answer = band, str(band_attr[band][0])
            q = ONE_HOP[kind].format(band=band)
        add("one-hop:" + kind, q, [answer], [para_id[title]], para_id[title], AnswerType.SPAN)
    for _ in range(n_cmp):
        while True:
            i, j = (int(x) for x in rng.choice(len(persons), size=2, replace=False))
            a, b = persons[i], persons[j]
            if person_attr[a]["year"] != person_attr[b]["year"]:
                break
        yes = person_attr[a]["year"] < person_attr[b]["year"]
        atype = AnswerType.YES if yes else AnswerType.NO
        add("comparison", COMPARISON.format(a=a, b=b), [atype.value],
            [para_id[a], para_id[b]], None, atype)
    return out


def check_synthetic(data, graph):
    """Generation-time validity checks; raises :class:`GenerationError`.

    * zero content-term overlap between two-hop questions and answer
      paragraphs (unless ``bridge_overlap``);
    * exactly one length-2 path from the named entity's paragraph reaches a
      paragraph holding the answer.
    """
    corpus = data.corpus
    for tq in (*data.train, *data.test):
        kind = data.kinds.get(tq.qid, "")
        if not kind.startswith("two-hop"):
            continue
        first, bearing = tq.gold_paras
        if not data.config.bridge_overlap:
            shared = set(content_tokens(tq.question)) & set(content_tokens(corpus.text(bearing)))
            if shared:
                raise GenerationError(f"{tq.qid}: question shares terms {sorted(shared)} "
                                      "with its answer paragraph")
        hits = [(first, nb) for nb in graph.neighbors(first)
                if contains_answer(corpus.text(nb), tq.answers)]
        if hits != [(first, bearing)] or contains_answer(corpus.text(first), tq.answers):
            raise GenerationError(f"{tq.qid}: expected exactly one answering path, found {hits}")


def zero_overlap_violations(data):
    """Two-hop qids whose question shares content terms with the answer paragraph."""
    bad = []
    for tq in (*data.train, *data.test):
        if data.kinds.get(tq.qid, "").startswith("two-hop"):
            q = set(content_tokens(tq.question))
            if q & set(content_tokens(data.corpus.text(tq.gold_paras[1]))):
                bad.append(tq.qid)
    return bad
