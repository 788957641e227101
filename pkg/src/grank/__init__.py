"""Collaborative ranking on a tripartite preference graph with personalized PageRank."""
__version__ = "0.1.0"

from .ingest import (Dataset, IdMap, Observation, ObservationSet, RatingRecord, RatingTable, Session,
                     SplitSpec, feedback_to_observations, parse_ratings, ratings_to_observations,
                     sessions_to_observations, split)
from .kernels import BACKEND
from .ppr import PprConfig, PprVector, TransitionModel, personalized_pagerank, solve_dense_oracle
from .scoring import ColdStartError, GRank, GrScore, RecommendationList, gr_scores, recommend
from .tpg import Tpg, build_tpg, preference_index

__all__ = [
    "BACKEND", "ColdStartError", "Dataset", "GRank", "GrScore", "IdMap", "Observation", "ObservationSet",
    "PprConfig", "PprVector", "RatingRecord", "RatingTable", "RecommendationList", "Session", "SplitSpec",
    "Tpg", "TransitionModel", "build_tpg", "feedback_to_observations", "gr_scores", "parse_ratings",
    "personalized_pagerank", "preference_index", "ratings_to_observations", "recommend",
    "sessions_to_observations", "solve_dense_oracle", "split",
]
