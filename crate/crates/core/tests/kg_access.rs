use std::sync::Arc;

use halubench::client::HttpClient;
use halubench::kg::fixture::{FixtureEntity, FixtureKg, FixtureStatement, FixtureStats, FixtureValue};
use halubench::kg::{KgAccess, KgEndpoints, KgError, KgSettings, StatisticsOutcome, TypeClass, ValueKind};
use halubench::tables::Tables;
use halubench::transport::InstrumentedTransport;

fn stats() -> FixtureStats {
    FixtureStats {
        page_views: Some(1200),
        site_links: Some(14),
        statements: Some(40),
        external_ids: 12,
        linked_entities: 20,
        references: 33,
    }
}

fn entity(id: &str, label: &str, type_id: &str) -> FixtureEntity {
    FixtureEntity {
        id: id.into(),
        label: Some(label.into()),
        type_id: type_id.into(),
        statements: vec![],
        stats: stats(),
        description: Some(format!("{label} is a thing that exists.")),
    }
}

fn stmt(rel: &str, label: &str, value: FixtureValue) -> FixtureStatement {
    FixtureStatement {
        relation_id: rel.into(),
        relation_label: label.into(),
        value,
    }
}

fn ent(id: &str, label: &str) -> FixtureValue {
    FixtureValue::Entity {
        id: id.into(),
        label: Some(label.into()),
    }
}

fn access(kg: FixtureKg) -> KgAccess {
    let server = kg.into_server(KgEndpoints::default());
    let client = HttpClient::new(Arc::new(server));
    KgAccess::new(client, KgSettings::default(), Arc::new(Tables::builtin()))
}

fn three() -> FixtureKg {
    let mut q1 = entity("Q1", "Ada Example", "Q5");
    q1.statements = vec![
        stmt("P106", "occupation", ent("Q82594", "computer scientist")),
        stmt("P106", "occupation", ent("Q170790", "mathematician")),
        stmt("P19", "place of birth", ent("Q84", "London")),
        stmt("P18", "image", FixtureValue::Media { file: "Ada.jpg".into() }),
        stmt(
            "P569",
            "date of birth",
            FixtureValue::Time {
                time: "1815-12-10T00:00:00Z".into(),
            },
        ),
    ];
    FixtureKg {
        entities: vec![
            q1,
            entity("Q2", "Blue Harbour", "Q3305213"),
            entity("Q3", "Some Gene", "Q7187"),
        ],
    }
}

#[test]
fn sampling_classifies_types() {
    let kg = access(three());
    let mut batch = kg.sample_random_entities(3, 7).unwrap();
    batch.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    let classes: Vec<_> = batch.iter().map(|e| e.type_class).collect();
    assert_eq!(
        classes,
        [TypeClass::VeryCommon, TypeClass::Uncommon, TypeClass::Invalid]
    );
    assert!(batch.iter().all(|e| e.statistics.is_none() && e.description.is_none()));
}

#[test]
fn sampling_is_seeded() {
    let kg = access(three());
    let ids = |seed| {
        kg.sample_random_entities(6, seed)
            .unwrap()
            .into_iter()
            .map(|e| e.entity_id)
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(11), ids(11));
    assert_eq!(ids(11).len(), 6);
    let distinct = (0..20).map(ids).collect::<std::collections::HashSet<_>>();
    assert!(distinct.len() > 1);
}

#[test]
fn empty_kg_is_malformed() {
    let kg = access(FixtureKg::default());
    assert!(matches!(
        kg.sample_random_entities(3, 1),
        Err(KgError::MalformedResponse(_))
    ));
}

#[test]
fn subgraph_returns_every_statement() {
    let kg = access(three());
    let triples = kg.fetch_subgraph_triples("Q1").unwrap();
    assert_eq!(triples.len(), 5);
    assert_eq!(kg.fetch_subgraph_triples("Q1").unwrap(), triples);
    assert!(triples.iter().any(|t| t.value_kind == ValueKind::Media));
    let birth = triples.iter().find(|t| t.relation_id == "P569").unwrap();
    assert_eq!(birth.fact_value, "10 December 1815");
    assert!(matches!(
        kg.fetch_subgraph_triples("Q999"),
        Err(KgError::EntityNotFound(_))
    ));
}

#[test]
fn statistics_complete_and_incomplete() {
    let mut fixture = three();
    fixture.entities[1].stats.page_views = None;
    fixture.entities[2].stats = FixtureStats {
        page_views: Some(0),
        site_links: Some(1),
        statements: Some(0),
        external_ids: 0,
        linked_entities: 0,
        references: 0,
    };
    let kg = access(fixture);
    match kg.fetch_statistics("Q1").unwrap() {
        StatisticsOutcome::Complete(s) => {
            assert_eq!(s.page_views, 1200);
            assert_eq!(s.site_links, 14);
            assert_eq!(s.statements, 40);
            assert_eq!(s.external_ids, 12);
            assert_eq!(s.linked_entities, 20);
            assert_eq!(s.references, 33);
            assert_eq!(s.wiki_token_count, 7);
        }
        other => panic!("{other:?}"),
    }
    match kg.fetch_statistics("Q2").unwrap() {
        StatisticsOutcome::Incomplete { missing } => assert_eq!(missing, ["page_views"]),
        other => panic!("{other:?}"),
    }
    match kg.fetch_statistics("Q3").unwrap() {
        StatisticsOutcome::Complete(s) => {
            assert_eq!(s.page_views, 0);
            assert_eq!((s.statements, s.references, s.external_ids), (0, 0, 0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn description_is_capped() {
    let mut fixture = three();
    let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join("  \n");
    fixture.entities[0].description = Some(words(300));
    fixture.entities[1].description = Some(words(2000));
    fixture.entities[2].description = None;
    let kg = access(fixture);
    let short = kg.fetch_description("Q1").unwrap();
    assert_eq!(short.split(' ').count(), 300);
    assert!(!short.contains('\n'));
    let long = kg.fetch_description("Q2").unwrap();
    assert_eq!(long.split(' ').count(), 1000);
    assert!(long.ends_with("w999"));
    assert!(matches!(
        kg.fetch_description("Q3"),
        Err(KgError::DescriptionMissing(_))
    ));
}

#[test]
fn cache_is_transparent() {
    let server = Arc::new(three().into_server(KgEndpoints::default()));
    let inner = server.clone();
    let counted = Arc::new(InstrumentedTransport::new(move |r| inner_send(&inner, r)));
    let cached = HttpClient::new(counted.clone()).with_cache();
    let plain = HttpClient::new(server);
    let tables = Arc::new(Tables::builtin());
    let a = KgAccess::new(cached, KgSettings::default(), tables.clone());
    let b = KgAccess::new(plain, KgSettings::default(), tables);
    for _ in 0..3 {
        assert_eq!(
            a.fetch_subgraph_triples("Q1").unwrap(),
            b.fetch_subgraph_triples("Q1").unwrap()
        );
        assert_eq!(a.fetch_statistics("Q1").unwrap(), b.fetch_statistics("Q1").unwrap());
    }
    let first = counted.call_count();
    a.fetch_subgraph_triples("Q1").unwrap();
    assert_eq!(counted.call_count(), first);
}

fn inner_send(
    server: &halubench::kg::fixture::FixtureKgServer,
    r: &halubench::transport::HttpRequest,
) -> Result<halubench::transport::HttpResponse, halubench::transport::TransportError> {
    use halubench::transport::Transport;
    server.send(r)
}
