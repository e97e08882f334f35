"""Deterministic stand-ins for the TeaStore microservices.

Every handler is a pure function of its arguments and the product fixtures,
so runs are reproducible across schedules and across execution modes.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources

from ..model import ServiceFailure
from ..runtime import ServiceRegistry

SERVICE_NAMES = (
    "getPageInfo", "getPageImg", "compilePage", "compilePageWithRecommends",
    "getTopItems", "processRecommendations", "login", "getPageInfoAsLoggedUser",
    "getQuery", "getQueryAsLoggedUser", "processQuery",
)


@lru_cache(maxsize=1)
def fixtures() -> dict:
    text = resources.files(__package__).joinpath("fixtures/products.json").read_text()
    data = json.loads(text)
    addresses = [p["address"] for p in data["products"]]
    if len(set(addresses)) != len(addresses):
        raise ValueError("product addresses must be unique")
    return data


def products() -> list[dict]:
    return fixtures()["products"]


def _product(service: str, address) -> dict:
    for p in products():
        if p["address"] == address:
            return p
    raise ServiceFailure(service, f"unknown address {address!r}")


def _user_of(service: str, token) -> str:
    if not isinstance(token, str) or not token.startswith("tok-"):
        raise ServiceFailure(service, "a login token is required")
    return token[len("tok-"):]


def _item(p: dict) -> dict:
    return {"address": p["address"], "title": p["title"], "popularity": p["popularity"]}


def get_page_info(address) -> dict:
    p = _product("getPageInfo", address)
    return {"address": p["address"], "title": p["title"], "description": p["description"]}


def get_page_img(address) -> str:
    return _product("getPageImg", address)["imageBase64"]


def compile_page(info, img) -> dict:
    page = {"title": info["title"], "description": info["description"], "image": img}
    if "user" in info:
        page["user"] = info["user"]
    return page


def compile_page_with_recommends(info, img, recommendations) -> dict:
    page = compile_page(info, img)
    page["recommendations"] = recommendations
    return page


def get_top_items(n, criterion) -> list:
    if criterion != "popularity":
        raise ServiceFailure("getTopItems", f"unknown ranking criterion {criterion!r}")
    ranked = sorted(products(), key=lambda p: (-p["popularity"], p["address"]))
    return [_item(p) for p in ranked[:n]]


def process_recommendations(items) -> dict:
    titles = [it["title"] for it in items]
    if not titles:
        return {"items": [], "description": "Flavoured with nothing in particular"}
    head = ", ".join(titles[:3])
    return {"items": titles, "description": f"Flavoured with {head}"}


def login(credentials) -> str:
    if not isinstance(credentials, str) or ":" not in credentials:
        return "none"
    user, _, password = credentials.partition(":")
    return f"tok-{user}" if fixtures()["users"].get(user) == password else "none"


def get_page_info_as_logged_user(address, token) -> dict:
    user = _user_of("getPageInfoAsLoggedUser", token)
    info = get_page_info(address)
    info["user"] = user
    return info


def get_query(info) -> dict:
    return {"about": info["address"]}


def get_query_as_logged_user(info, token) -> dict:
    return {"about": info["address"], "user": _user_of("getQueryAsLoggedUser", token)}


def _stable_pick(user: str, candidates: list[dict]) -> dict:
    key = user + "|" + ",".join(p["address"] for p in candidates)
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return candidates[int.from_bytes(digest, "big") % len(candidates)]


def process_query(query) -> list:
    """Three suggestions unrelated to the viewed product; a logged user gets a personal pick first."""
    others = sorted((p for p in products() if p["address"] != query["about"]),
                    key=lambda p: (-p["popularity"], p["address"]))
    if "user" not in query:
        return [_item(p) for p in others[:3]]
    pick = _stable_pick(query["user"], others)
    rest = [p for p in others if p is not pick][:2]
    return [_item(pick)] + [_item(p) for p in rest]


HANDLERS = {
    "getPageInfo": get_page_info,
    "getPageImg": get_page_img,
    "compilePage": compile_page,
    "compilePageWithRecommends": compile_page_with_recommends,
    "getTopItems": get_top_items,
    "processRecommendations": process_recommendations,
    "login": login,
    "getPageInfoAsLoggedUser": get_page_info_as_logged_user,
    "getQuery": get_query,
    "getQueryAsLoggedUser": get_query_as_logged_user,
    "processQuery": process_query,
}


def teastore_service(name: str, args: list):
    handler = HANDLERS.get(name)
    if handler is None:
        raise ServiceFailure(name, "no such service")
    return handler(*args)


def _always_fail(name: str):
    def handler(*args):
        raise ServiceFailure(name, "service unavailable")
    return handler


def teastore_registry(failing=()) -> ServiceRegistry:
    """Registry with every TeaStore handler; names in ``failing`` always fail."""
    reg = ServiceRegistry(HANDLERS)
    for name in failing:
        reg.register(name, _always_fail(name))
    return reg
