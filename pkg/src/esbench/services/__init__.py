from .planer import Planer
from .ranker import Ranker, score_products
from .recommender import Recommender, normalize_query
from .searcher import Searcher, category_priority
from .timing import STAGES, StageTiming
from .transport import HttpClient, LocalClient, RemoteError, ServiceApp, serve_http

__all__ = [
    "STAGES",
    "HttpClient",
    "LocalClient",
    "Planer",
    "Ranker",
    "Recommender",
    "RemoteError",
    "Searcher",
    "ServiceApp",
    "StageTiming",
    "category_priority",
    "normalize_query",
    "score_products",
    "serve_http",
]
