"""Deterministic bookstore dataset for benchmark workloads.

Five tables: users place orders for items written by authors, with one
or more order lines per order. All values derive from the seed, so a
(sizes, seed) pair names exactly one dataset whether it is generated in
memory or written to CSV files and loaded back.
"""

from __future__ import annotations

import csv
import datetime
import os
import random

from cycledb.sqlfront import parse_catalog
from cycledb.storage import load_csv

BOOKSTORE_DDL = """
CREATE TABLE USERS (
    USER_ID INT PRIMARY KEY, USERNAME TEXT, COUNTRY TEXT, ACCOUNT INT);
CREATE TABLE AUTHORS (AUTHOR_ID INT PRIMARY KEY, NAME TEXT);
CREATE TABLE ITEMS (
    ITEM_ID INT PRIMARY KEY, AUTHOR_ID INT, PRICE FLOAT, CATEGORY TEXT,
    AVAILABLE INT);
CREATE TABLE ORDERS (
    ORDER_ID INT PRIMARY KEY, USER_ID INT, ITEM_ID INT, STATUS TEXT,
    ORDER_DATE DATE);
CREATE TABLE ORDER_LINES (
    LINE_ID INT PRIMARY KEY, ORDER_ID INT, ITEM_ID INT, QTY INT,
    AMOUNT FLOAT);
"""

DEFAULT_SIZES = {
    "USERS": 1000,
    "AUTHORS": 100,
    "ITEMS": 500,
    "ORDERS": 2000,
    "ORDER_LINES": 4000,
}

COUNTRIES = ("de", "us", "jp", "br", "in", "fr", "pl", "za")
CATEGORIES = ("fiction", "science", "history", "travel", "cooking")
STATUSES = ("placed", "shipped", "delivered", "returned")


def bookstore_catalog():
    return parse_catalog(BOOKSTORE_DDL)


def generate(sizes=None, seed=1):
    """Rows for every bookstore table, fully determined by (sizes, seed)."""
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    rng = random.Random(seed)
    n_users = sizes["USERS"]
    n_authors = sizes["AUTHORS"]
    n_items = sizes["ITEMS"]
    n_orders = sizes["ORDERS"]
    n_lines = sizes["ORDER_LINES"]
    epoch = datetime.date(2019, 1, 1)

    rows = {
        "USERS": [
            (i, f"user{i:05d}", rng.choice(COUNTRIES), rng.randrange(0, 5000))
            for i in range(1, n_users + 1)
        ],
        "AUTHORS": [(i, f"author {i:04d}") for i in range(1, n_authors + 1)],
        "ITEMS": [
            (
                i,
                rng.randint(1, n_authors),
                round(rng.uniform(1.0, 120.0), 2),
                rng.choice(CATEGORIES),
                rng.randint(0, 50),
            )
            for i in range(1, n_items + 1)
        ],
        "ORDERS": [
            (
                i,
                rng.randint(1, n_users),
                rng.randint(1, n_items),
                rng.choice(STATUSES),
                epoch + datetime.timedelta(days=rng.randrange(0, 2000)),
            )
            for i in range(1, n_orders + 1)
        ],
        "ORDER_LINES": [
            (
                i,
                rng.randint(1, n_orders),
                rng.randint(1, n_items),
                rng.randint(1, 80),
                round(rng.uniform(1.0, 400.0), 2),
            )
            for i in range(1, n_lines + 1)
        ],
    }
    return rows


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, datetime.date):
        return value.isoformat()
    return str(value)


def write_csvs(catalog, rows, out_dir):
    """One <table>.csv per table, loadable by the engine's CSV reader."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, schema in catalog.items():
        path = os.path.join(out_dir, f"{name.lower()}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(schema.attrs)
            writer.writerows(
                [_cell(v) for v in values] for values in rows.get(name, [])
            )
        paths[name] = path
    return paths


def ensure_dataset(config):
    """(catalog, rows, stats) for a workload config.

    Without a data dir the rows are generated in memory. With one, CSVs
    are written on first use and read back on every use, so repeated
    runs see the identical dataset even across schema-compatible seeds.
    """
    catalog = bookstore_catalog()
    sizes = {**DEFAULT_SIZES, **config.sizes}
    if config.data_dir is None:
        rows = generate(sizes, config.seed)
    else:
        missing = [
            name
            for name in catalog
            if not os.path.exists(os.path.join(config.data_dir, f"{name.lower()}.csv"))
        ]
        if missing:
            write_csvs(catalog, generate(sizes, config.seed), config.data_dir)
        rows = {}
        for name, schema in catalog.items():
            path = os.path.join(config.data_dir, f"{name.lower()}.csv")
            store = load_csv(schema, path)
            rows[name] = [values for _, values in store.scan_at(1)]
    stats = {name: len(rows[name]) for name in catalog}
    return catalog, rows, stats
