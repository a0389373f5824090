"""Proactive attachment recommendation for email replies.

Mines request/reply instances from a corpus, synthesizes silver queries
against a query-likelihood retriever, trains a neural term ranker on them and
evaluates query-formulation methods with rank metrics.
"""

__version__ = "0.1.0"
