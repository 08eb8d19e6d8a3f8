use std::io::Cursor;

use proptest::prelude::*;
use serde_json::json;
use textpde::formats::checkpoint::{read_checkpoint_from, write_checkpoint_to, Checkpoint};
use textpde::formats::dataset::{read_dataset_from, read_header_from, write_dataset_to};
use textpde::formats::store::{read_store_from, write_store_to};
use textpde::generate::{generate, GenerateSpec};
use textpde::Error;
use textpde_core::embed::{hex, sentence_hash, EmbeddingStore, Provider};
use textpde_core::model::{ArchConfig, SurrogateModel};
use textpde_core::sim::{Equation, Trajectory};

fn heat(count: usize, grid: usize) -> Vec<Trajectory> {
    let spec = GenerateSpec {
        grid,
        ..GenerateSpec::new(Equation::Heat, count)
    };
    generate(&spec, 2).unwrap()
}

fn bytes_of(trajs: &[Trajectory]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, trajs).unwrap();
    buf
}

fn format_offset<T: std::fmt::Debug>(r: Result<T, Error>) -> u64 {
    match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {other:?}"),
    }
}

/// Header length, read straight from the fixed prelude.
fn header_len(buf: &[u8]) -> usize {
    u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let trajs = heat(3, 64);
    let buf = bytes_of(&trajs);
    assert_eq!(buf.len(), 16 + header_len(&buf) + 3 * 101 * 64 * 64 * 4);
    let back = read_dataset_from(Cursor::new(&buf)).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in trajs.iter().zip(&back) {
        assert_eq!(a.params, b.params);
        assert_eq!(a.dt_out.to_bits(), b.dt_out.to_bits());
        assert_eq!(a.domain, b.domain);
        assert!(a.frames.iter().zip(&b.frames).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let h = read_header_from(Cursor::new(&buf)).unwrap();
    assert_eq!(h.counts.get("heat"), Some(&3));
    assert_eq!((h.grid, h.frames), (64, 101));
}

#[test]
fn generation_does_not_depend_on_thread_count() {
    let spec = GenerateSpec {
        grid: 16,
        first_seed: 40,
        ..GenerateSpec::new(Equation::Burgers, 4)
    };
    assert_eq!(generate(&spec, 1).unwrap(), generate(&spec, 3).unwrap());
    let ns = GenerateSpec {
        grid: 16,
        ns_sim_grid: 32,
        ..GenerateSpec::new(Equation::NavierStokes, 1)
    };
    assert_eq!(generate(&ns, 1).unwrap()[0].frames.len(), 101 * 16 * 16);
    assert!(generate(&GenerateSpec::new(Equation::ShallowWater, 1), 1).is_err());
}

#[test]
fn dataset_corruption_is_located() {
    let trajs = heat(2, 16);
    let buf = bytes_of(&trajs);
    let payload_at = 16 + header_len(&buf);

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(read_dataset_from(Cursor::new(&bad))), 0);

    let mut bad = buf.clone();
    bad[4] = 9;
    assert_eq!(format_offset(read_dataset_from(Cursor::new(&bad))), 4);

    let cut = payload_at + 101 * 16 * 16 * 4 + 10;
    assert_eq!(format_offset(read_dataset_from(Cursor::new(&buf[..cut]))), cut as u64);

    let mut long = buf.clone();
    long.push(0);
    assert_eq!(format_offset(read_dataset_from(Cursor::new(&long))), buf.len() as u64);

    // header claims three heat trajectories but lists two
    let text = std::str::from_utf8(&buf[16..payload_at])
        .unwrap()
        .replace("\"heat\":2", "\"heat\":3");
    let mut bad = buf[..8].to_vec();
    bad.extend_from_slice(&(text.len() as u64).to_le_bytes());
    bad.extend_from_slice(text.as_bytes());
    bad.extend_from_slice(&buf[payload_at..]);
    let err = read_dataset_from(Cursor::new(&bad)).unwrap_err();
    assert!(
        matches!(&err, Error::Format { detail, .. } if detail.contains("counts")),
        "{err}"
    );

    // non-finite payload value
    let mut bad = buf.clone();
    bad[payload_at..payload_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(format_offset(read_dataset_from(Cursor::new(&bad))), payload_at as u64);
}

/// Builds a Shallow-Water file the way the converter does, without going
/// through this crate's serializers.
#[test]
fn converter_style_shallow_water_file_reads() {
    let grid = 8;
    let header = json!({
        "version": 1,
        "grid": grid,
        "frames": 101,
        "counts": { "shallow_water": 1 },
        "trajectories": [{
            "params": {
                "equation": "ShallowWater", "bc_type": "Neumann", "bc_value": 0.0, "beta": 0.0,
                "alpha_x": 0.0, "alpha_y": 0.0, "nu": 0.0, "amplitude": 0.0, "seed": 17
            },
            "dt_out": 0.01,
            "domain": { "lo": -2.5, "hi": 2.5 }
        }]
    })
    .to_string();
    let mut buf = b"PDET".to_vec();
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for i in 0..101 * grid * grid {
        buf.extend_from_slice(&(1.0f32 + (i % 7) as f32 * 0.01).to_le_bytes());
    }
    let trajs = read_dataset_from(Cursor::new(&buf)).unwrap();
    assert_eq!(trajs[0].params.equation, Equation::ShallowWater);
    assert_eq!(trajs[0].frame_count(), 101);
    assert_eq!(trajs[0].params.seed, 17);
}

#[test]
fn sentence_hash_matches_reference_vector() {
    // digest computed independently with Python's hashlib
    let text = "The Heat equation models how a quantity such as heat diffuses through a given region. The Heat equation is a linear parabolic partial differential equation. This system has Dirichlet boundary conditions. Dirichlet boundary conditions have a constant value. In this case we have a value of 0.02376866371113555 on the boundary. In this case, the diffusion term has a coefficient of 0.007772297756667862. This system is strongly diffusive. The predicted state should look smoother than the inputs.";
    assert_eq!(
        hex(&sentence_hash(text)),
        "a61a368b07831301e3883367a46ae093255e0ac419070d7329837cfc7355a0e8"
    );
}

fn store(dim: usize, n: usize) -> EmbeddingStore {
    let mut s = EmbeddingStore::new(dim);
    for i in 0..n {
        s.insert_sentence(
            &format!("sentence {i}"),
            (0..dim).map(|j| (i * dim + j) as f32 * 0.5 - 3.0).collect(),
        )
        .unwrap();
    }
    s
}

#[test]
fn store_roundtrip_and_layout() {
    let s = store(6, 5);
    let mut buf = Vec::new();
    write_store_to(&mut buf, &s).unwrap();
    assert_eq!(&buf[..4], b"EMB1");
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 6);
    assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 5);
    assert_eq!(buf.len(), 20 + 5 * (32 + 6 * 4));
    let back = read_store_from(Cursor::new(&buf)).unwrap();
    assert_eq!(back, s);
    let v = back.lookup_text("sentence 3", Provider::SentenceStore).unwrap();
    assert_eq!(v.values[0], 6.0);
}

#[test]
fn store_corruption_is_detected() {
    let s = store(4, 3);
    let mut buf = Vec::new();
    write_store_to(&mut buf, &s).unwrap();
    let rec = 32 + 16;

    assert_eq!(
        format_offset(read_store_from(Cursor::new(&buf[..buf.len() - 1]))),
        (buf.len() - 1) as u64
    );
    let mut long = buf.clone();
    long.extend_from_slice(&[0; 3]);
    assert_eq!(format_offset(read_store_from(Cursor::new(&long))), buf.len() as u64);

    let mut dup = buf.clone();
    let first = dup[20..20 + rec].to_vec();
    dup[20 + rec..20 + 2 * rec].copy_from_slice(&first);
    assert_eq!(format_offset(read_store_from(Cursor::new(&dup))), (20 + rec) as u64);

    let mut nan = buf.clone();
    nan[20 + 32..20 + 36].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert_eq!(format_offset(read_store_from(Cursor::new(&nan))), 20);

    let mut zero = buf.clone();
    zero[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert_eq!(format_offset(read_store_from(Cursor::new(&zero))), 8);

    let mut count = buf.clone();
    count[12..20].copy_from_slice(&4u64.to_le_bytes());
    assert!(read_store_from(Cursor::new(&count)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn store_roundtrip_any(dim in 1usize..12, rows in prop::collection::vec(("[a-z ]{0,20}", prop::collection::vec(-1e6f32..1e6, 12)), 0..10)) {
        let mut s = EmbeddingStore::new(dim);
        for (text, v) in &rows {
            if s.get(&sentence_hash(text)).is_none() {
                s.insert_sentence(text, v[..dim].to_vec()).unwrap();
            }
        }
        let mut buf = Vec::new();
        write_store_to(&mut buf, &s).unwrap();
        prop_assert_eq!(read_store_from(Cursor::new(&buf)).unwrap(), s);
    }
}

fn tiny(multimodal: bool) -> ArchConfig {
    ArchConfig {
        grid: 16,
        hidden: 4,
        head_dim: 2,
        heads: 2,
        recombine_width: 6,
        token_vocab: 32,
        multimodal,
        provider: Provider::Tokenizer,
        ..ArchConfig::next_step_baseline()
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    for mm in [false, true] {
        let mut model = SurrogateModel::<f32>::new(tiny(mm), 9).unwrap();
        // include values whose bit patterns are easy to mangle
        let id = model.params().find("lift.b").unwrap();
        model.params_mut().get_mut(id).data_mut()[0] = f32::MIN_POSITIVE / 4.0;
        let ck = Checkpoint::new(model.clone(), 9, vec!["seed 9: test".into()]);
        assert_eq!(ck.meta.op_count, model.params().len());
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &ck).unwrap();
        let back = read_checkpoint_from(Cursor::new(&buf)).unwrap();
        assert_eq!(back.meta, ck.meta);
        let (a, b) = (model.params().flat(), back.model.params().flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.len(), b.len());

        assert!(read_checkpoint_from(Cursor::new(&buf[..buf.len() - 2])).is_err());
        let mut other = ck.meta.clone();
        other.tensors.pop();
        other.op_count -= 1;
        let mut bad = Vec::new();
        write_checkpoint_to(&mut bad, &Checkpoint { meta: other, model }).unwrap();
        assert!(matches!(
            read_checkpoint_from(Cursor::new(&bad)),
            Err(Error::Format { .. })
        ));
    }
}
