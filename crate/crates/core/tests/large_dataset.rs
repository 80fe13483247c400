use xicm_core::demo_store::{load_dataset, save_dataset};
use xicm_core::dynamics::{
    decode_features, embed_dataset, encode_features, export_features, import_features, select_top_k, DynamicsError,
    DynamicsFeature, FeatureMode, FeatureTable, D_LANG,
};
use xicm_core::sim::{generate_seen_dataset, resolve_tasks, SimConfig};

#[test]
fn full_scale_seen_set_round_trips() {
    let cfg = SimConfig {
        image_size: 8,
        ..SimConfig::default()
    };
    let seen = resolve_tasks("seen").unwrap();
    // 8 seen tasks x 450 episodes
    let ds = generate_seen_dataset(&seen, 3600 / seen.len(), 7, &cfg).unwrap();
    assert_eq!(ds.len(), 3600);

    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3600);
    assert_eq!(back.digest(), ds.digest());

    let table = embed_dataset(ds.demos(), None, FeatureMode::VisInLang).unwrap();
    let path = dir.path().join("pool.bin");
    export_features(&table, &path).unwrap();
    let loaded = import_features(&path).unwrap();
    assert_eq!(loaded.len(), 3600);
    for (a, b) in table.features.iter().zip(&loaded.features) {
        assert_eq!(a.demo_id, b.demo_id);
        let bits = |f: &DynamicsFeature| f.components().map(f32::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn external_feature_width_is_accepted_but_not_mixed() {
    // e.g. latents from an external image model
    let mut wide = FeatureTable::new(FeatureMode::VisOutLang, 1024, D_LANG, "external:latent");
    wide.push(DynamicsFeature {
        demo_id: "q".into(),
        vis: vec![0.5; 1024],
        lang: vec![0.1; D_LANG],
    })
    .unwrap();
    let decoded = decode_features(&encode_features(&wide)).unwrap();
    assert_eq!(decoded.d_vis, 1024);

    let cfg = SimConfig {
        image_size: 8,
        ..SimConfig::default()
    };
    let ds = generate_seen_dataset(&resolve_tasks("push_button").unwrap(), 3, 1, &cfg).unwrap();
    let pool = embed_dataset(ds.demos(), None, FeatureMode::VisInLang).unwrap();
    let err = select_top_k(&decoded.features[0], &pool.features, 1).unwrap_err();
    assert!(matches!(err, DynamicsError::DimensionMismatch { .. }), "{err:?}");
}
