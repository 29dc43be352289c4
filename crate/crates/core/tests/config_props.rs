use indexmap::IndexMap;
use proptest::prelude::*;

use mas_core::config::{load_agent_configs, to_document, AgentConfig, AgentKind, ConfigError};
use mas_core::shopfloor::MachineConfig;

fn machine() -> impl Strategy<Value = MachineConfig> {
    (
        prop::collection::vec(("[a-z]{3,10}", 1u32..30, 0.5f64..60.0), 1..4),
        0.0f64..1.0,
        0.0f64..1.0,
    )
        .prop_map(|(ops, defect_rate, breakdown_probability)| MachineConfig {
            process_times: ops
                .iter()
                .map(|(op, _, t)| (op.clone(), *t))
                .collect::<IndexMap<_, _>>(),
            defect_rate,
            breakdown_probability,
            tool_table: ops.iter().map(|(op, tool, _)| (op.clone(), *tool)).collect(),
        })
}

fn agent(name: String) -> impl Strategy<Value = AgentConfig> {
    let text = "[ -~]{0,60}";
    let functions = prop::collection::vec("[a-z_]{3,20}", 0..4);
    (
        any::<bool>(),
        text,
        text,
        functions,
        prop::option::of("[ -~\n]{1,80}"),
        prop::option::of(machine()),
    )
        .prop_map(
            move |(product, annotation, instructions, function_names, specification, machine)| AgentConfig {
                name: name.clone(),
                kind: if product {
                    AgentKind::Product
                } else {
                    AgentKind::Resource
                },
                annotation,
                instructions,
                function_names,
                specification: specification.filter(|_| product),
                machine_configuration: machine.filter(|_| !product),
            },
        )
}

fn agents() -> impl Strategy<Value = Vec<AgentConfig>> {
    prop::collection::btree_set("[A-Za-z][A-Za-z0-9_-]{0,12}", 1..6)
        .prop_flat_map(|names| names.into_iter().map(agent).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn documents_round_trip(configs in agents()) {
        let doc = to_document(&configs);
        let back = load_agent_configs(&doc).unwrap();
        // IndexMap equality ignores order, so compare table order separately
        for (b, c) in back.iter().zip(&configs) {
            let order = |a: &AgentConfig| a.machine_configuration.as_ref().map(|m| {
                (m.tool_table.keys().cloned().collect::<Vec<_>>(), m.process_times.keys().cloned().collect::<Vec<_>>())
            });
            prop_assert_eq!(order(b), order(c));
        }
        prop_assert_eq!(back, configs);
    }

    #[test]
    fn duplicate_names_are_rejected(configs in agents()) {
        let doc = to_document(&configs);
        let first = &doc[1..doc.len() - 1];
        let doubled = format!("{{{first},{first}}}");
        let is_validation = matches!(load_agent_configs(&doubled), Err(ConfigError::Validation { .. }));
        prop_assert!(is_validation);
    }
}
