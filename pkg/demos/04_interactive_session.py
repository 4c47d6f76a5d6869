"""A full interactive session: analyze, park missing variables, resolve, execute.

In interactive mode the pipeline refuses to guess: variables the provider could
not determine wait for a human. Here the provider is a fixture that only
answers some of the questions, and the script plays the clinician role.
"""

from cdr_agent.pipeline import PipelineConfig, SessionManager
from cdr_agent.providers import MockEmbeddingProvider, MockLlmProvider, text_digest
from cdr_agent.selection import SelectionConfig
from cdr_agent import load_registry

from _util import demo_registry_dir

note = (
    "A 30-year-old male presents after blunt trauma to the neck and is held in a cervical "
    "collar pending cervical spine clearance. Palpation reveals midline spinal tenderness "
    "over the cervical spine. The patient denies intoxication and has no signs of impairment."
)

# This fixture deliberately leaves two indicators undetermined.
fixtures = {
    f"{text_digest(note)}:nexus_cspine": (
        "midline_spinal_tenderness: yes\nintoxication: no\nfocal_neurologic_deficit: no"
    )
}

registry = load_registry(demo_registry_dir())
manager = SessionManager(
    registry,
    MockEmbeddingProvider(),
    MockLlmProvider(fixtures=fixtures),
    PipelineConfig(selection=SelectionConfig(), interactive=True),
)

session = manager.analyze(note, {"patient_age_years": 30.0, "patient_sex": "male"})
print(f"status: {session.status.value}")
print(f"selected: {list(session.profile.selected)}")
print(f"pending human input: {dict(session.pending)}")

for cdr_id, names in list(session.pending.items()):
    for name in names:
        spec = registry.get(cdr_id).variable(name)
        print(f"\nclinician is asked: {spec.definition}")
        answer = False  # the clinician answers 'no' for the demo
        session = manager.resolve_variables(session.session_id, cdr_id, {name: answer})
        print(f"  answered {name} = {answer}; status now {session.status.value}")

print("\nfinal report:")
for cdr_id in session.report.order:
    result = session.report.per_cdr[cdr_id]
    print(f"  {cdr_id}: {result.outcome.label} (positive={result.outcome.is_positive})")
for ev in session.extractions:
    for name, vv in sorted(ev.values.items()):
        print(f"    {name:28s} {str(vv.value):5s} via {vv.provenance.value}")
t = session.timings
print(f"timings: t_sel={t.t_sel * 1e3:.1f} ms, t_exe={t.t_exe * 1e3:.1f} ms, t_tot={t.t_tot * 1e3:.1f} ms")
