"""Grammar-guided, model-assisted fuzzing of SQL database engines.

The pipeline: grammar templates (:mod:`sqlfuzz.grammar`) and random schemas
(:mod:`sqlfuzz.schema`) are instantiated by a language model
(:mod:`sqlfuzz.llm`), executed against a target (:mod:`sqlfuzz.executor`),
repaired when they fail (:mod:`sqlfuzz.repair`), kept when they reach new
behaviour, recombined (:mod:`sqlfuzz.mutation`), and crashes are validated and
minimised (:mod:`sqlfuzz.reduction`). :mod:`sqlfuzz.orchestrator` runs the loop.
"""

__version__ = "0.1.0"
