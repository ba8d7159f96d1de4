"""Deterministic synthetic datasets.

* CDR-style positional records: one index per day, each record placing a
  phone at a cell at a time.
* A miniature financial graph with the entity and edge indices the
  supported complex-read queries touch.  Edges are stored as their own
  documents with ``src``/``dst`` keys.  For every emitted parameter set the
  generator plants a motif so each supported query returns rows.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..filters import MATCH_ALL, Filter, Range, Term
from ..planner import LogicalPlan, ScanNode, Statistics, semi
from ..storage import Store

DAY_SECONDS = 86_400


# -- CDR ------------------------------------------------------------------------------------

@dataclass
class CdrConfig:
    seed: int = 1
    days: int = 2
    docs_per_day: int = 50_000
    unique_phones: int = 20_000
    positions_per_phone: float = 5.0
    cells: int = 500
    shards: int = 2

    def __post_init__(self):
        for name in ("days", "docs_per_day", "unique_phones", "cells", "shards"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.positions_per_phone < 1:
            raise ValueError("positions_per_phone must be >= 1")


@dataclass
class Dataset:
    store: Store
    docs: dict[str, list[dict]]
    params: list[dict] = field(default_factory=list)
    routing: dict[str, str] = field(default_factory=dict)

    @property
    def indices(self) -> list[str]:
        return list(self.docs)

    def fingerprint(self) -> str:
        return fingerprint(self.docs)


def fingerprint(docs: Mapping[str, list[dict]]) -> str:
    h = hashlib.sha256()
    for name in sorted(docs):
        h.update(name.encode())
        for d in docs[name]:
            h.update(json.dumps(d, sort_keys=True).encode())
    return h.hexdigest()


def cdr_index(day: int) -> str:
    return f"cdr-day-{day:03d}"


def gen_cdr_dataset(config: CdrConfig | None = None, store: Store | None = None) -> Dataset:
    config = config or CdrConfig()
    rng = random.Random(config.seed)
    store = store or Store()
    active = max(1, min(config.unique_phones, round(config.docs_per_day / config.positions_per_phone)))
    docs: dict[str, list[dict]] = {}
    record_id = 0
    for day in range(1, config.days + 1):
        phones = rng.sample(range(1, config.unique_phones + 1), active)
        home = {p: rng.randrange(config.cells) for p in phones}
        # every active phone gets one position, the rest are drawn at random
        picks = phones + [rng.choice(phones) for _ in range(config.docs_per_day - len(phones))]
        rng.shuffle(picks)
        rows = []
        for phone in picks[:config.docs_per_day]:
            # phones mostly stay near a home cell
            cell = home[phone] if rng.random() < 0.6 else rng.randrange(config.cells)
            record_id += 1
            rows.append({
                "record_id": record_id,
                "phone_id": phone,
                "cell": cell,
                "day": day,
                "timestamp": day * DAY_SECONDS + rng.randrange(DAY_SECONDS),
            })
        name = cdr_index(day)
        store.load(name, rows, config.shards, "record_id")
        docs[name] = rows
    params = [{"PHONE_ID": docs[cdr_index(1)][i]["phone_id"]} for i in range(min(16, config.docs_per_day))]
    return Dataset(store, docs, params, {n: "record_id" for n in docs})


def cdr_queries(config: CdrConfig, phone_id: int | None = None) -> dict[str, LogicalPlan]:
    """Executable two-day versions of the area, same-location and co-location joins."""
    if config.days < 2:
        raise ValueError("CDR queries need at least two days")
    d1, d2 = cdr_index(1), cdr_index(2)
    half = config.cells // 2
    area_a = Filter.of(Range("cell", 0, half, True, False))
    area_b = Filter.of(Range("cell", half, None, True, False))
    out = {
        "Q1": LogicalPlan(ScanNode(d1, area_a, joins=(semi("phone_id", "phone_id", ScanNode(d2, area_b)),)), "Q1"),
        "Q4": LogicalPlan(ScanNode(d1, joins=(semi("cell", "cell", ScanNode(d2)),)), "Q4"),
    }
    if phone_id is not None:
        out["Q3"] = LogicalPlan(ScanNode(d1, joins=(semi("cell", "cell", ScanNode(
            d2, Filter.of(Term("phone_id", phone_id)))),)), "Q3")
    return out


# documents per set in the full-size benchmark; Q3's child is one phone's positions over 90 days
CDR_SHAPES = {
    "Q1": (78e6, 78e6, "phone_id", "phone_id"),
    "Q2": (546e6, 546e6, "phone_id", "phone_id"),
    "Q3": (14e9, 2_160, "cell", "cell"),
    "Q4": (156e6, 156e6, "cell", "cell"),
    "Q5": (1.092e9, 1.092e9, "cell", "cell"),
    "Q6": (2.184e9, 2.184e9, "cell", "cell"),
}


def cdr_query_shapes(scale: float = 0.01) -> dict[str, tuple[LogicalPlan, Statistics]]:
    """Plan shapes with synthetic statistics for plan inspection.

    Set sizes are multiplied by ``scale``; the per-phone child of Q3 is not,
    since shrinking the dataset removes phones rather than positions.
    """
    out = {}
    for name, (parent_n, child_n, pk, ck) in CDR_SHAPES.items():
        parent_idx, child_idx = f"{name.lower()}-parent", f"{name.lower()}-child"
        child_scaled = child_n if name == "Q3" else child_n * scale
        stats = Statistics(doc_counts={parent_idx: parent_n * scale, child_idx: child_scaled})
        plan = LogicalPlan(ScanNode(parent_idx, MATCH_ALL, joins=(semi(pk, ck, ScanNode(child_idx)),)), name)
        out[name] = (plan, stats)
    return out


# -- financial graph ------------------------------------------------------------------------

ENTITY_INDICES = ("Person", "Account", "Loan", "Medium", "Company")
EDGE_INDICES = (
    "AccountTransferAccount", "AccountWithdrawAccount", "AccountRepayLoan", "LoanDepositAccount",
    "MediumSignInAccount", "PersonOwnAccount", "CompanyOwnAccount", "PersonApplyLoan",
    "PersonGuaranteePerson", "PersonInvestCompany",
)
# (source entity, target entity) per edge index
EDGE_ENDPOINTS = {
    "AccountTransferAccount": ("Account", "Account"),
    "AccountWithdrawAccount": ("Account", "Account"),
    "AccountRepayLoan": ("Account", "Loan"),
    "LoanDepositAccount": ("Loan", "Account"),
    "MediumSignInAccount": ("Medium", "Account"),
    "PersonOwnAccount": ("Person", "Account"),
    "CompanyOwnAccount": ("Company", "Account"),
    "PersonApplyLoan": ("Person", "Loan"),
    "PersonGuaranteePerson": ("Person", "Person"),
    "PersonInvestCompany": ("Person", "Company"),
}

T0 = 1_600_000_000_000
DAY_MS = DAY_SECONDS * 1000


@dataclass
class FinbenchConfig:
    seed: int = 7
    persons: int = 150
    accounts: int = 300
    loans: int = 80
    mediums: int = 40
    companies: int = 40
    transfers: int = 1_200
    edges_per_type: int = 300
    span_days: int = 365
    window_days: int = 30
    planted: int = 3
    shards: int = 2

    def __post_init__(self):
        if self.accounts < max(3, self.persons):
            raise ValueError("accounts must be >= max(3, persons) so an account can share a person's id")
        for name in ("persons", "loans", "mediums", "companies", "planted", "shards"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.window_days >= self.span_days:
            raise ValueError("window_days must be shorter than span_days")

    @classmethod
    def desk_scale(cls, seed: int = 7) -> "FinbenchConfig":
        """About 200k entity documents and 1M edge documents."""
        return cls(seed=seed, persons=50_000, accounts=100_000, loans=25_000, mediums=10_000,
                   companies=15_000, transfers=400_000, edges_per_type=66_000, planted=20, shards=4)


def gen_finbench_mini(config: FinbenchConfig | None = None, store: Store | None = None) -> Dataset:
    config = config or FinbenchConfig()
    rng = random.Random(config.seed)
    store = store or Store()
    span = config.span_days * DAY_MS
    counts = {"Person": config.persons, "Account": config.accounts, "Loan": config.loans,
              "Medium": config.mediums, "Company": config.companies}

    docs: dict[str, list[dict]] = {
        "Person": [{"id": i, "name": f"person-{i}", "isBlocked": rng.random() < 0.1}
                   for i in range(1, config.persons + 1)],
        "Account": [{"id": i, "accountType": rng.choice(["checking", "savings", "brokerage"]),
                     "isBlocked": rng.random() < 0.1} for i in range(1, config.accounts + 1)],
        "Loan": [{"id": i, "loanAmount": round(rng.uniform(1_000, 100_000), 2),
                  "balance": round(rng.uniform(0, 50_000), 2)} for i in range(1, config.loans + 1)],
        "Medium": [{"id": i, "mediumType": rng.choice(["POS", "IPv4", "phone"]),
                    "isBlocked": rng.random() < 0.2} for i in range(1, config.mediums + 1)],
        "Company": [{"id": i, "name": f"company-{i}"} for i in range(1, config.companies + 1)],
    }
    for e in EDGE_INDICES:
        docs[e] = []

    def edge(index: str, src: int, dst: int, t: int | None = None, amount: float | None = None) -> None:
        rows = docs[index]
        rows.append({
            "id": len(rows) + 1,
            "src": src,
            "dst": dst,
            "createTime": T0 + rng.randrange(span) if t is None else t,
            "amount": round(rng.uniform(1, 10_000), 2) if amount is None else amount,
        })

    for index, (s_kind, d_kind) in EDGE_ENDPOINTS.items():
        n = config.transfers if index == "AccountTransferAccount" else config.edges_per_type
        for _ in range(n):
            edge(index, rng.randint(1, counts[s_kind]), rng.randint(1, counts[d_kind]))

    params = []
    blocked_media = [m["id"] for m in docs["Medium"] if m["isBlocked"]] or [1]
    for m in docs["Medium"]:
        if m["id"] == blocked_media[0]:
            m["isBlocked"] = True
    for _ in range(config.planted):
        start = T0 + rng.randrange(span - config.window_days * DAY_MS)
        end = start + config.window_days * DAY_MS

        def inside() -> int:
            return rng.randrange(start + 1, end)

        person = rng.randint(1, config.persons)
        account = rng.randint(1, config.accounts)

        def other_account() -> int:
            while True:
                a = rng.randint(1, config.accounts)
                if a not in (person, account):
                    return a

        loan = rng.randint(1, config.loans)
        # TCR1: blocked medium signs into an account that received a transfer from ACCOUNT_ID
        o = other_account()
        edge("MediumSignInAccount", rng.choice(blocked_media), o)
        edge("AccountTransferAccount", account, o, inside())
        # TCR2: loan deposit, one transfer, account owned by PERSON_ID
        o2, y = other_account(), other_account()
        edge("LoanDepositAccount", loan, o2, inside())
        edge("AccountTransferAccount", o2, y, inside())
        edge("PersonOwnAccount", person, y)
        # TCR3: two-hop transfer cycle back to ACCOUNT_ID
        b = other_account()
        edge("AccountTransferAccount", account, b, inside())
        edge("AccountTransferAccount", b, account, inside())
        # TCR5: PERSON_ID owns an account that sent a transfer
        c, d = other_account(), other_account()
        edge("PersonOwnAccount", person, c)
        edge("AccountTransferAccount", c, d, inside())
        # TCR7 / TCR9: transfers through the account whose id equals PERSON_ID
        x, z = other_account(), other_account()
        edge("AccountTransferAccount", x, person, inside())
        edge("AccountTransferAccount", person, z, inside())
        edge("LoanDepositAccount", loan, person, inside())
        edge("AccountRepayLoan", other_account(), person, inside())
        # TCR11: PERSON_ID guarantees someone who applied for a loan
        q = rng.randint(1, config.persons)
        edge("PersonGuaranteePerson", person, q, inside())
        edge("PersonApplyLoan", q, loan)
        # TCR12: PERSON_ID's account sends to a company-owned account
        pa, ca = other_account(), other_account()
        edge("PersonOwnAccount", person, pa)
        edge("AccountTransferAccount", pa, ca, inside())
        edge("CompanyOwnAccount", rng.randint(1, config.companies), ca)
        params.append({"PERSON_ID": person, "ACCOUNT_ID": account, "START": start, "END": end})

    routing = {}
    for name, rows in docs.items():
        field_name = "src" if name in EDGE_ENDPOINTS else "id"
        store.load(name, rows, config.shards, field_name)
        routing[name] = field_name
    return Dataset(store, docs, params, routing)


# -- bulk files -----------------------------------------------------------------------------

def write_ndjson(path, index: str, docs: Iterable[Mapping], shards: int = 1, routing: str = "id") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"index": index, "shards": shards, "routing": routing}) + "\n")
        for d in docs:
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_ndjson(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty bulk file")
    header = json.loads(lines[0])
    if "index" not in header:
        raise ValueError(f"{path}: first line must be a header naming the index")
    return header, [json.loads(ln) for ln in lines[1:]]


def load_ndjson(store: Store, path) -> str:
    header, docs = read_ndjson(path)
    store.load(header["index"], docs, int(header.get("shards", 1)), header.get("routing", "id"))
    return header["index"]
