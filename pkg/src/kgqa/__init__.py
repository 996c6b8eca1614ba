"""Ontology-constrained knowledge-graph construction and graph-grounded QA.

Modules cover the full pipeline: ``ontology`` (type system and validation),
``llm_gateway`` (chat endpoints and the scripted mock), ``extraction``
(three-stage triple extraction), ``graph_store`` (embedded property graph
with CSV interchange), ``retrieval`` (keyword search and context
rendering), ``qa_engine`` (multi-round sessions), ``eval_metrics``
(BLEU/ROUGE), ``judge_eval`` (LLM-as-judge comparison), ``service_api``
(HTTP service) and ``cli`` (operator entry point).
"""

__version__ = "0.1.0"
