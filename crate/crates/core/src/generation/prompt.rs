use crate::dataset::ClassLabel;

const TEMPLATE: &str = "Generate {count} Chest X-ray imaging data consisting of images representing \
different {class} patients, generated individually as separate downloadable files so I can \
download them one by one. The views you generate need to maintain a consistent format, meaning \
the overall image is portrait-oriented, and the images must show variations in gender, height, \
weight (fat and thin), and age, as well as human posture and body stance during imaging (such as \
some bodies or heads tilted left or right, rotation, arm orientation, etc.), along with \
differences in lung texture to ensure clinical authenticity and individual diversity. Note that \
each picture must be on a separate canvas, meaning you need to generate {count} images, all in \
portrait orientation with height greater than width, and the view focused on the thoracic cavity.";

/// Generation prompt for one batch of `batch_size` images of one class.
pub fn build_prompt(target_class: ClassLabel, batch_size: usize) -> String {
    TEMPLATE
        .replace("{count}", &batch_size.to_string())
        .replace("{class}", target_class.as_str())
}

/// Recover the class a prompt asks for.
pub fn class_of_prompt(prompt: &str) -> Option<ClassLabel> {
    if prompt.contains("different pneumonia patients") {
        Some(ClassLabel::Pneumonia)
    } else if prompt.contains("different healthy patients") {
        Some(ClassLabel::Healthy)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pneumonia_batch_of_ten() {
        let p = build_prompt(ClassLabel::Pneumonia, 10);
        assert!(p.starts_with(
            "Generate 10 Chest X-ray imaging data consisting of images representing different \
             pneumonia patients, generated individually"
        ));
        assert!(p.contains("you need to generate 10 images, all in portrait orientation"));
        assert!(p.ends_with("the view focused on the thoracic cavity."));
        assert!(!p.contains('{'));
        assert_eq!(class_of_prompt(&p), Some(ClassLabel::Pneumonia));
    }

    #[test]
    fn healthy_single() {
        let p = build_prompt(ClassLabel::Healthy, 1);
        assert!(p.starts_with("Generate 1 Chest X-ray imaging data"));
        assert!(p.contains("different healthy patients"));
        assert!(p.contains("generate 1 images"));
        assert_eq!(class_of_prompt(&p), Some(ClassLabel::Healthy));
    }

    #[test]
    fn pure() {
        assert_eq!(
            build_prompt(ClassLabel::Healthy, 10),
            build_prompt(ClassLabel::Healthy, 10)
        );
    }
}
