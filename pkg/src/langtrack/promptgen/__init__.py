"""Language-prompt construction by set algebra over language elements."""

from .expr import (And, Elem, Expr, ExprSchemaError, MAX_DEPTH, Not, Or, depth, eval_expression,
                   from_prefix, leaf_multiset, leaves, referred_sets, to_prefix)
from .generate import (PromptConfig, PromptLabel, PromptSetStats, REFERENCE_SCALE, build_prompt_labels,
                       count_boxes, curated_templates, enumerate_combinations, format_stats, make_label,
                       random_candidates, random_tree, summarize_promptset)
from .grammar import ExternalDescriber, parse_elements, render_description
