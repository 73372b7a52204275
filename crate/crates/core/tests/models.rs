use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use ddlab::dataset::{build_dataset, DatasetConfig};
use ddlab::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use ddlab::models::{build_model, extract_objects, Model, ModelConfig, ModelKind, ParamStore, RelationModule};
use ddlab::nn::{softmax_cross_entropy, Mode};
use ddlab::train::{adam_step, AdamConfig, AdamState};
use ddlab::{Rng, Tensor};

fn logits<T: ddlab::Scalar>(model: &mut Model<T>, images: &Tensor<T>, questions: &Tensor<T>, image_of: &[usize]) -> Tensor<T> {
    let mut rng = Rng::seed_from_u64(0);
    let mut s = model.session(Mode::Eval, &mut rng);
    let i = s.tape.constant(images.clone());
    let q = s.tape.constant(questions.clone());
    let out = model.forward(&mut s, i, q, image_of).unwrap();
    s.tape.value(out).clone()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen::<f32>())
}

#[test]
fn every_kind_maps_eight_images_to_eight_logit_rows() {
    let images = random(&[8, 3, 75, 75], 1);
    let questions = Tensor::from_fn(&[8, 11], |i| ((i % 11) == (i / 11) % 11) as u8 as f32);
    let image_of: Vec<usize> = (0..8).collect();
    for kind in ModelKind::ALL {
        let mut model: Model<f32> = build_model(&ModelConfig::for_kind(kind), 3).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        let mut s = model.session(Mode::Train, &mut rng);
        let i = s.tape.constant(images.clone());
        let q = s.tape.constant(questions.clone());
        let out = model.forward(&mut s, i, q, &image_of).unwrap();
        assert_eq!(s.tape.shape(out), &[8, 10], "{}", kind);
        assert!(s.tape.value(out).all_finite());
    }
}

#[test]
fn mismatched_question_rows_are_rejected() {
    let mut model: Model<f32> = build_model(&ModelConfig::for_kind(ModelKind::CnnMlp), 0).unwrap();
    let mut rng = Rng::seed_from_u64(0);
    let mut s = model.session(Mode::Eval, &mut rng);
    let i = s.tape.constant(random(&[2, 3, 75, 75], 0));
    let q = s.tape.constant(Tensor::zeros(&[3, 11]));
    assert!(model.forward(&mut s, i, q, &[0, 1]).is_err());
}

#[test]
fn densenets_have_sixteen_layers_and_equal_size() {
    let plain: Model<f32> = build_model(&ModelConfig::for_kind(ModelKind::DensenetMlp), 0).unwrap();
    let dilated: Model<f32> = build_model(&ModelConfig::for_kind(ModelKind::DilatedDensenetMlp), 0).unwrap();
    for m in [&plain, &dilated] {
        assert_eq!(m.conv_layer_count() + 1, 16);
        assert_eq!(m.config().densenet.growth_rate, 32);
    }
    assert_eq!(plain.parameter_count(), dilated.parameter_count());
    let shapes = |m: &Model<f32>| m.params().values().iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>();
    assert_eq!(shapes(&plain), shapes(&dilated));

    let net = dilated.densenet().unwrap();
    for stage in net.stages() {
        assert_eq!(stage.dilations(), vec![1, 2, 4, 8]);
        for spec in stage.conv_specs() {
            // same padding keeps the spatial size
            assert_eq!(spec.padding, spec.dilation);
        }
    }
    for stage in plain.densenet().unwrap().stages() {
        assert_eq!(stage.dilations(), vec![1; 4]);
    }
}

fn jittered_relation_module(seed: u64) -> (ParamStore<f32>, RelationModule) {
    let config = ModelConfig::for_kind(ModelKind::CnnRn);
    let mut rng = Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();
    let module = RelationModule::build(&mut store, 26, &config.relation, 11, 10, &mut rng);
    // the classifier starts at zero, which would make any input look invariant
    for (name, value) in store.names().to_vec().iter().zip(store.values_mut()) {
        if name.starts_with("rn.f1") {
            for v in value.data_mut() {
                *v = 0.1 * rng.sample::<f32, _>(StandardNormal);
            }
        }
    }
    (store, module)
}

fn relation_logits(store: &ParamStore<f32>, module: &RelationModule, objects: &Tensor<f32>, question: &Tensor<f32>) -> Tensor<f32> {
    let mut rng = Rng::seed_from_u64(0);
    let mut s = ddlab::models::Session::new(store, Mode::Eval, &mut rng);
    let o = s.tape.constant(objects.clone());
    let q = s.tape.constant(question.clone());
    let out = module.forward(&mut s, o, q).unwrap();
    s.tape.value(out).clone()
}

#[test]
fn relation_module_ignores_object_order() {
    let (store, module) = jittered_relation_module(5);
    let (n, m, f) = (2, 25, 26);
    let mut rng = Rng::seed_from_u64(11);
    let objects = Tensor::from_fn(&[n, m, f], |_| rng.gen::<f32>() * 2.0 - 1.0);
    let question = Tensor::from_fn(&[n, 11], |i| (i % 3 == 0) as u8 as f32);
    let base = relation_logits(&store, &module, &objects, &question);
    assert!(base.data().iter().any(|v| v.abs() > 1e-3), "logits should not be trivially zero");

    for trial in 0..5 {
        let mut order: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let permuted = Tensor::from_fn(&[n, m, f], |i| {
            let (b, rest) = (i / (m * f), i % (m * f));
            let (o, c) = (rest / f, rest % f);
            objects.at(&[b, order[o], c])
        });
        let out = relation_logits(&store, &module, &permuted, &question);
        let diff = out.max_abs_diff(&base);
        assert!(diff <= 1e-5, "trial {}: {}", trial, diff);
    }
}

#[test]
fn relation_module_depends_on_objects() {
    let (store, module) = jittered_relation_module(6);
    let question = Tensor::from_fn(&[1, 11], |i| (i == 2) as u8 as f32);
    let a = relation_logits(&store, &module, &random(&[1, 25, 26], 1), &question);
    let b = relation_logits(&store, &module, &random(&[1, 25, 26], 2), &question);
    assert!(a.max_abs_diff(&b) > 1e-4);
}

#[test]
fn objects_carry_their_grid_coordinates() {
    let mut tape = ddlab::Tape::<f32>::new();
    let x = tape.constant(random(&[1, 24, 5, 5], 4));
    let o = extract_objects(&mut tape, x).unwrap();
    assert_eq!(tape.shape(o), &[1, 25, 26]);
    let v = tape.value(o);
    for cell in 0..25 {
        assert_eq!(v.at(&[0, cell, 24]), (cell % 5) as f32 / 4.0);
        assert_eq!(v.at(&[0, cell, 25]), (cell / 5) as f32 / 4.0);
    }
}

#[test]
fn every_parameter_trains() {
    let data = build_dataset(&DatasetConfig::new(2, 8)).unwrap();
    let batch = data.batch::<f32>(&[0, 1]);
    for kind in ModelKind::ALL {
        let config = ModelConfig::for_kind(kind).with_dropout(0.0);
        let mut model: Model<f32> = build_model(&config, 2).unwrap();
        let mut adam = AdamState::new(model.params().values());
        for step in 0..2 {
            let mut rng = Rng::seed_from_u64(step);
            let mut s = model.session(Mode::Train, &mut rng);
            let i = s.tape.constant(batch.images.clone());
            let q = s.tape.constant(batch.questions.clone());
            let out = model.forward(&mut s, i, q, &batch.image_of).unwrap();
            let loss = softmax_cross_entropy(&mut s.tape, out, &batch.answers).unwrap();
            let grads = s.tape.backward(loss).unwrap();
            let grads: Vec<Option<Tensor<f32>>> = s.param_vars().iter().map(|&v| grads.get(v).cloned()).collect();
            drop(s);
            for (name, g) in model.params().names().iter().zip(&grads) {
                let g = g.as_ref().unwrap_or_else(|| panic!("{}: {} has no gradient", kind, name));
                assert!(g.all_finite(), "{}: {}", kind, name);
                // after the zero-initialized classifier has moved once, every
                // weight matrix receives signal
                if step == 1 && name.ends_with(".weight") {
                    assert!(g.data().iter().any(|v| *v != 0.0), "{}: {} has a zero gradient", kind, name);
                }
            }
            adam_step(model.params_mut().values_mut(), &grads, &mut adam, 1e-3, &AdamConfig::default()).unwrap();
        }
    }
}

#[test]
fn checkpoint_restores_identical_logits() {
    let data = build_dataset(&DatasetConfig::new(2, 3)).unwrap();
    let batch = data.batch::<f32>(&[0, 1]);
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let config = ModelConfig::for_kind(kind);
        let mut model: Model<f32> = build_model(&config, 9).unwrap();
        // move batch-norm statistics and the classifier away from their initial values
        let mut rng = Rng::seed_from_u64(1);
        let mut s = model.session(Mode::Train, &mut rng);
        let i = s.tape.constant(batch.images.clone());
        let q = s.tape.constant(batch.questions.clone());
        model.forward(&mut s, i, q, &batch.image_of).unwrap();
        drop(s);
        for v in model.params_mut().values_mut() {
            for x in v.data_mut() {
                *x += 0.01;
            }
        }
        let path = dir.path().join(format!("{}.ckpt", kind));
        let meta = CheckpointMeta {
            config: config.clone(),
            seed: 9,
            epoch: 1,
            dataset_sha256: None,
            val_combined: None,
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let (read_meta, mut restored) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(read_meta, meta);
        let a = logits(&mut model, &batch.images, &batch.questions, &batch.image_of);
        let b = logits(&mut restored, &batch.images, &batch.questions, &batch.image_of);
        assert_eq!(a, b, "{}", kind);
    }
}
