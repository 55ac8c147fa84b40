use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{EnvironmentImage, ImageId};

/// Registry of user-deployed environment images.
#[derive(Debug, Default, Clone)]
pub struct ImageRegistry {
    images: BTreeMap<ImageId, EnvironmentImage>,
}

impl ImageRegistry {
    pub fn register(&mut self, image: EnvironmentImage) -> Result<()> {
        if image.image_id.0.is_empty() {
            return Err(Error::InvalidSpec("empty image_id".into()));
        }
        if self.images.contains_key(&image.image_id) {
            return Err(Error::DuplicateImage(image.image_id));
        }
        self.images.insert(image.image_id.clone(), image);
        Ok(())
    }

    pub fn get(&self, id: &ImageId) -> Result<&EnvironmentImage> {
        self.images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.clone()))
    }

    pub fn contains(&self, id: &ImageId) -> bool {
        self.images.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EnvironmentImage> {
        self.images.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str) -> EnvironmentImage {
        EnvironmentImage {
            image_id: id.into(),
            name: "specfem".into(),
            owner: "alice".into(),
            content_digest: "sha256:00".into(),
        }
    }

    #[test]
    fn ids_are_unique() {
        let mut r = ImageRegistry::default();
        r.register(img("a")).unwrap();
        assert_eq!(r.register(img("a")), Err(Error::DuplicateImage("a".into())));
        assert!(r.get(&"a".into()).is_ok());
        assert_eq!(
            r.get(&"b".into()).unwrap_err(),
            Error::UnknownImage("b".into())
        );
    }
}
