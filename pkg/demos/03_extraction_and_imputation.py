"""Variable extraction: prompt building, parsing, negative imputation, exclusions.

The language-model provider here is the offline mock, which grounds boolean
variables by literal phrase matching with sentence-scoped negation. Whatever
the provider fails to determine is imputed with the variable's negative
default, the value that cannot trigger a positive decision by itself.
"""

from cdr_agent import (
    apply_exclusions,
    build_prompt,
    bundled_registry_dir,
    extract,
    impute_negative,
    load_registry,
)
from cdr_agent.providers import MockLlmProvider

registry = load_registry(bundled_registry_dir())
iai = registry.get("pecarn_iai")

note = (
    "A 9-year-old female presents after a fall from a trampoline onto a fence. "
    "There is abdominal tenderness on palpation of the lower quadrants. "
    "The child denies abdominal pain at rest. Vomiting has occurred repeatedly since the injury."
)

prompt = build_prompt(note, iai)
print("=== prompt sent to the provider ===")
print(prompt.rendered_text)

ev = extract(note, iai, MockLlmProvider())
print("=== extracted ===")
for name, vv in ev.values.items():
    print(f"  {name:28s} = {vv.value} ({vv.provenance.value})")
print(f"  undetermined: {list(ev.missing)}")

completed = impute_negative(ev, iai)
print("\n=== after negative imputation ===")
for name, vv in completed.values.items():
    print(f"  {name:28s} = {vv.value} ({vv.provenance.value})")

print("\n=== exclusion check at two ages ===")
for age in (9.0, 34.0):
    verdict = apply_exclusions(completed, {"patient_age_years": age}, iai)
    print(f"  age {age:>4}: excluded={verdict.excluded} {list(verdict.reasons)}")
