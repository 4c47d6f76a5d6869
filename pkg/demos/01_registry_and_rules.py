"""Walk through the rule registry: loading, validation, and direct execution.

Rules are data: a typed variable schema plus a decision tree in a small JSON
expression language. This script loads the bundled definitions, shows what
validation catches, and executes one rule against hand-built assignments.
"""

from cdr_agent import bundled_registry_dir, execute_rule, load_registry, validate_definition
from cdr_agent.registry import definition_to_dict, unused_variables

registry = load_registry(bundled_registry_dir())
print(f"loaded {len(registry)} definitions, digest {registry.source_digest[:12]}")
for d in registry:
    print(f"  {d.id:20s} {len(d.variables)} variables, outcomes: {', '.join(d.outcomes)}")

nexus = registry.get("nexus_cspine")
print("\ncervical spine imaging rule, all indicator combinations with exactly one set:")
for name in nexus.variable_names:
    values = {n: n == name for n in nexus.variable_names}
    outcome = execute_rule(nexus, values)
    print(f"  only {name:28s} -> {outcome.label}")

print("\nall-negative assignment:")
outcome = execute_rule(nexus, {n: False for n in nexus.variable_names})
print(f"  -> {outcome.label} (positive={outcome.is_positive})")

print("\nwhat validation catches:")
broken = definition_to_dict(nexus)
broken["rule"]["then"] = "maybe later"
for violation in validate_definition(broken):
    print(f"  {violation}")

print("\ndead-variable lint over the bundled definitions:")
for d in registry:
    print(f"  {d.id}: {unused_variables(d) or 'all variables reachable'}")
