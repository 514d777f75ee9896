use spgan::dataset::{make_toy_repository, ToyFamily};
use spgan::geometry::PointCloud;
use spgan::manipulation::transfer_labels;
use spgan::training::{Trainer, TrainingConfig};

const BASE: u16 = 1;

fn labeled_centroid_z(cloud: &PointCloud, label: u16) -> f64 {
    let labels = cloud.labels().unwrap();
    let zs: Vec<f64> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| cloud.points()[[i, 2]] as f64)
        .collect();
    zs.iter().sum::<f64>() / zs.len() as f64
}

#[test]
fn lower_hemisphere_label_stays_low_on_every_generated_shape() {
    let repo = make_toy_repository(&ToyFamily::ALL, 8, 256, 0).unwrap();
    let cfg = TrainingConfig {
        n_points: 256,
        max_iterations: Some(400),
        ..TrainingConfig::desk()
    };
    let mut trainer = Trainer::new(cfg, &repo.clouds()).unwrap();
    for _ in 0..400 {
        trainer.step().unwrap();
    }
    let ckpt = trainer.checkpoint();
    let sphere = ckpt.sphere().unwrap();
    let labels: Vec<u16> = sphere.coords().rows().into_iter().map(|r| if r[2] < 0.0 { BASE } else { 0 }).collect();

    let shapes = ckpt.sample(9, 21).unwrap();
    let source = shapes[0].clone().with_labels(labels.clone()).unwrap();
    let transferred = transfer_labels(&source, &shapes[1..]).unwrap();
    for (t, cloud) in transferred.iter().enumerate() {
        assert_eq!(cloud.labels().unwrap(), labels.as_slice());
        assert_eq!(cloud.points(), shapes[t + 1].points());
        let base_z = labeled_centroid_z(cloud, BASE);
        let shape_z = cloud.centroid()[2];
        assert!(base_z < shape_z, "shape {t}: base centroid z {base_z} not below shape centroid z {shape_z}");
    }

    let back = transfer_labels(&transferred[0], &[shapes[0].clone()]).unwrap();
    assert_eq!(back[0], source);
}

#[test]
fn unlabeled_source_or_size_mismatch_is_rejected() {
    let a = PointCloud::new(ndarray::Array2::zeros((4, 3))).unwrap();
    let b = PointCloud::new(ndarray::Array2::zeros((5, 3))).unwrap();
    assert!(transfer_labels(&a, &[a.clone()]).is_err());
    let labeled = a.clone().with_labels(vec![0; 4]).unwrap();
    assert!(transfer_labels(&labeled, &[b]).is_err());
}
