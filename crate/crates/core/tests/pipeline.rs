use bitext_core::checkpoint::Checkpoint;
use bitext_core::corpus::{Lang, Vocabulary};
use bitext_core::gan::{real_codes, sample_bilingual, GanData, GanTrainer};
use bitext_core::nmt::{NmtTrainer, TrainData, TrainMode};
use bitext_core::synth::{CipherParams, CipherSpec};
use bitext_core::{GanConfig, GanModel, NmtConfig, NmtModel};

type Pairs = Vec<(Vec<usize>, Vec<usize>)>;

fn data() -> (Vocabulary, Vocabulary, Pairs) {
    let spec = CipherSpec::new(CipherParams {
        vocab_size: 10,
        min_len: 2,
        max_len: 4,
        seed: 3,
    })
    .unwrap();
    let c = spec.make_corpus(96, 1);
    let v0 = Vocabulary::build(&c.l0, 100);
    let v1 = Vocabulary::build(&c.l1, 100);
    let pairs = c.l0.iter().zip(&c.l1).map(|(a, b)| (v0.encode(a), v1.encode(b))).collect();
    (v0, v1, pairs)
}

fn nmt_config() -> NmtConfig {
    NmtConfig {
        mode: TrainMode::Supervised,
        embed: 8,
        hidden: 12,
        attn: 8,
        max_len: 6,
        batch_size: 16,
        epochs: 2,
        lr: 1e-2,
        ..NmtConfig::default()
    }
}

#[test]
fn translator_then_generator() {
    let (v0, v1, pairs) = data();
    let vocab = [v0.len(), v1.len()];
    let model = NmtModel::new(nmt_config(), vocab, 5).unwrap();
    let mut trainer = NmtTrainer::new(model, 5);
    let mut epochs = 0;
    trainer
        .train(&TrainData::Supervised { pairs: pairs.clone() }, &pairs[..16], |t, log| {
            epochs += 1;
            assert!(log.recon.is_finite() && log.cross.is_finite());
            assert!(t.model.check_shared_weights()?);
            Ok(())
        })
        .unwrap();
    assert_eq!(epochs, 2);

    // checkpoint round trip keeps translations identical
    let ck = Checkpoint {
        kind: "nmt".into(),
        config: String::new(),
        epoch: 2,
        rng: Some(trainer.rng_state()),
        params: trainer.model.params(),
    };
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let reloaded = NmtModel::from_params(nmt_config(), vocab, back.params).unwrap();
    let src: Vec<Vec<usize>> = pairs[..8].iter().map(|p| p.0.clone()).collect();
    assert_eq!(
        reloaded.translate(&src, Lang::L0, Lang::L1).unwrap(),
        trainer.model.translate(&src, Lang::L0, Lang::L1).unwrap()
    );

    let net = &trainer.model.net;
    let gcfg = GanConfig {
        noise_dim: 6,
        max_len: 6,
        batch_size: 16,
        epochs: 1,
        lr: 1e-3,
        ..GanConfig::default()
    };
    let codes = real_codes(net, &src, Lang::L0, 6).unwrap();
    assert!(codes.iter().all(|c| c.values.shape() == [6, 24]));

    let before = net.params.clone();
    let gan = GanModel::for_translator(gcfg, net, 5).unwrap();
    let mut gt = GanTrainer::new(gan, 5);
    let (l0, l1) = pairs.iter().cloned().unzip();
    gt.train(net, &GanData { l0, l1, parallel: true }, |log| assert!(log.wasserstein.is_finite()))
        .unwrap();
    assert!(net.params.bit_eq(&before));
    assert_eq!(gt.critic_updates, pairs.len() / 16);

    let samples = sample_bilingual(&gt.model, net, 10, 9).unwrap();
    assert_eq!(samples.len(), 10);
    assert_eq!(samples, sample_bilingual(&gt.model, net, 10, 9).unwrap());
    for (a, b) in &samples {
        assert!(a.len() <= 6 && b.len() <= 6);
        assert!(a.iter().all(|&t| t < vocab[0]) && b.iter().all(|&t| t < vocab[1]));
    }
}
