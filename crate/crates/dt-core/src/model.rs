//! Thing model: shapes declare capabilities, templates compose shapes into
//! instantiable definitions, things are instances bound to gateway tags.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use tag_protocol::{Quality, TagType, TagValue};
use thiserror::Error;

pub const DEFAULT_EVENT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("`{0}` declared twice")]
    DuplicateDeclaration(String),
    #[error("property `{0}` provided by more than one shape")]
    DuplicateProperty(String),
    #[error("unknown shape `{0}`")]
    UnknownShape(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{0}` already registered")]
    DuplicateTemplate(String),
    #[error("thing `{0}` already exists")]
    DuplicateThingId(String),
    #[error("binding `{0}` refers to an undeclared property or unmapped tag")]
    UnboundTag(String),
    #[error("unknown thing `{0}`")]
    UnknownThing(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("property `{0}` is not writable")]
    NotWritable(String),
    #[error("value for `{0}` has the wrong type")]
    TypeMismatch(String),
    #[error("event trigger on `{0}` needs a boolean property")]
    BadTrigger(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyDecl {
    pub name: String,
    pub ty: TagType,
    pub writable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Edge {
    Rising,
    Falling,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub property: String,
    pub edge: Edge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDecl {
    pub name: String,
    /// Properties captured into the event payload when it fires.
    pub fields: Vec<String>,
    pub trigger: Option<Trigger>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDecl {
    pub name: String,
    pub params: Vec<(String, TagType)>,
    pub result: Option<TagType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ThingShape {
    pub name: String,
    pub properties: Vec<PropertyDecl>,
    pub events: Vec<EventDecl>,
    pub services: Vec<ServiceDecl>,
}

impl ThingShape {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn property(mut self, name: &str, ty: TagType, writable: bool) -> Self {
        self.properties.push(PropertyDecl {
            name: name.into(),
            ty,
            writable,
        });
        self
    }

    pub fn event(mut self, name: &str, trigger: Option<(&str, Edge)>, fields: &[&str]) -> Self {
        self.events.push(EventDecl {
            name: name.into(),
            fields: fields.iter().map(|f| f.to_string()).collect(),
            trigger: trigger.map(|(p, edge)| Trigger {
                property: p.into(),
                edge,
            }),
        });
        self
    }

    pub fn service(mut self, name: &str, params: &[(&str, TagType)], result: Option<TagType>) -> Self {
        self.services.push(ServiceDecl {
            name: name.into(),
            params: params.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            result,
        });
        self
    }

    /// Declaration names must be unique within the shape.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        let names = self
            .properties
            .iter()
            .map(|p| &p.name)
            .chain(self.events.iter().map(|e| &e.name))
            .chain(self.services.iter().map(|s| &s.name));
        for n in names {
            if !seen.insert(n) {
                return Err(ModelError::DuplicateDeclaration(n.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThingTemplate {
    pub name: String,
    pub shapes: Vec<String>,
    pub own: ThingShape,
    pub defaults: BTreeMap<String, TagValue>,
}

/// A template with its shapes flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTemplate {
    pub name: String,
    pub properties: BTreeMap<String, PropertyDecl>,
    pub events: Vec<EventDecl>,
    pub services: Vec<ServiceDecl>,
    pub defaults: BTreeMap<String, TagValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyValue {
    #[serde(serialize_with = "ser_value")]
    pub value: TagValue,
    #[serde(serialize_with = "ser_quality")]
    pub quality: Quality,
    /// Source time in milliseconds, if the value came from telemetry.
    pub source_ms: Option<u64>,
    pub tick: Option<u64>,
    /// False until the first telemetry or user write.
    pub initialized: bool,
}

fn ser_value<S: serde::Serializer>(v: &TagValue, s: S) -> Result<S::Ok, S::Error> {
    match v {
        TagValue::Bool(b) => s.serialize_bool(*b),
        TagValue::Int(i) => s.serialize_i32(*i),
        TagValue::Float(f) => s.serialize_f64(*f),
        TagValue::Str(x) => s.serialize_str(x),
    }
}

fn ser_quality<S: serde::Serializer>(q: &Quality, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(match q {
        Quality::Good => "Good",
        Quality::Stale => "Stale",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThingEvent {
    /// Position in the twin's total order of state changes.
    pub seq: u64,
    pub thing_id: String,
    pub event: String,
    pub ms: u64,
    pub tick: Option<u64>,
    pub data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thing {
    pub thing_id: String,
    pub template: String,
    pub properties: BTreeMap<String, PropertyValue>,
    /// Property name to north tag name (`DT/<tag>`).
    pub bindings: BTreeMap<String, String>,
    pub events: VecDeque<ThingEvent>,
    pub event_capacity: usize,
    /// Events evicted from the ring buffer.
    pub events_dropped: u64,
}

impl Thing {
    pub fn value(&self, property: &str) -> Option<&TagValue> {
        self.properties.get(property).map(|p| &p.value)
    }

    pub fn is_bound(&self, property: &str) -> bool {
        self.bindings.contains_key(property)
    }

    fn log(&mut self, e: ThingEvent) {
        if self.events.len() == self.event_capacity {
            self.events.pop_front();
            self.events_dropped += 1;
        }
        self.events.push_back(e);
    }
}

fn display_value(v: &TagValue) -> String {
    match v {
        TagValue::Bool(b) => u8::from(*b).to_string(),
        TagValue::Int(i) => i.to_string(),
        TagValue::Float(f) => f.to_string(),
        TagValue::Str(s) => s.clone(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ThingModel {
    shapes: BTreeMap<String, ThingShape>,
    templates: BTreeMap<String, ResolvedTemplate>,
    things: BTreeMap<String, Thing>,
    /// North tag to `(thing, property)` pairs bound to it.
    by_tag: BTreeMap<String, Vec<(String, String)>>,
    event_capacity: usize,
}

impl ThingModel {
    pub fn new(event_capacity: usize) -> Self {
        Self {
            event_capacity: event_capacity.max(1),
            ..Self::default()
        }
    }

    pub fn register_shape(&mut self, shape: ThingShape) -> Result<(), ModelError> {
        shape.validate()?;
        if self.shapes.contains_key(&shape.name) {
            return Err(ModelError::DuplicateDeclaration(shape.name));
        }
        self.shapes.insert(shape.name.clone(), shape);
        Ok(())
    }

    /// Flattens the template's shapes; a property provided twice rejects the
    /// whole template rather than letting one shadow the other.
    pub fn register_template(&mut self, template: ThingTemplate) -> Result<(), ModelError> {
        if self.templates.contains_key(&template.name) {
            return Err(ModelError::DuplicateTemplate(template.name));
        }
        template.own.validate()?;
        let mut parts = Vec::new();
        for s in &template.shapes {
            parts.push(
                self.shapes
                    .get(s)
                    .ok_or_else(|| ModelError::UnknownShape(s.clone()))?,
            );
        }
        parts.push(&template.own);
        let mut properties = BTreeMap::new();
        let mut events: Vec<EventDecl> = Vec::new();
        let mut services: Vec<ServiceDecl> = Vec::new();
        for shape in parts {
            for p in &shape.properties {
                if properties.insert(p.name.clone(), p.clone()).is_some() {
                    return Err(ModelError::DuplicateProperty(p.name.clone()));
                }
            }
            for e in &shape.events {
                if events.iter().any(|x| x.name == e.name) {
                    return Err(ModelError::DuplicateDeclaration(e.name.clone()));
                }
                events.push(e.clone());
            }
            for s in &shape.services {
                if services.iter().any(|x| x.name == s.name) {
                    return Err(ModelError::DuplicateDeclaration(s.name.clone()));
                }
                services.push(s.clone());
            }
        }
        for e in &events {
            if let Some(t) = &e.trigger {
                match properties.get(&t.property) {
                    Some(p) if p.ty == TagType::Bool => {}
                    _ => return Err(ModelError::BadTrigger(t.property.clone())),
                }
            }
            if let Some(f) = e.fields.iter().find(|f| !properties.contains_key(*f)) {
                return Err(ModelError::UnknownProperty(f.clone()));
            }
        }
        for (name, v) in &template.defaults {
            let p = properties
                .get(name)
                .ok_or_else(|| ModelError::UnknownProperty(name.clone()))?;
            if p.ty != v.tag_type() {
                return Err(ModelError::TypeMismatch(name.clone()));
            }
        }
        self.templates.insert(
            template.name.clone(),
            ResolvedTemplate {
                name: template.name,
                properties,
                events,
                services,
                defaults: template.defaults,
            },
        );
        Ok(())
    }

    pub fn template(&self, name: &str) -> Option<&ResolvedTemplate> {
        self.templates.get(name)
    }

    /// Creates a thing with default values. Every binding must name a
    /// declared property and a tag for which `mapped` holds.
    pub fn instantiate(
        &mut self,
        template: &str,
        thing_id: &str,
        bindings: BTreeMap<String, String>,
        mapped: impl Fn(&str) -> bool,
    ) -> Result<&Thing, ModelError> {
        let t = self
            .templates
            .get(template)
            .ok_or_else(|| ModelError::UnknownTemplate(template.into()))?;
        if self.things.contains_key(thing_id) {
            return Err(ModelError::DuplicateThingId(thing_id.into()));
        }
        for (prop, tag) in &bindings {
            if !t.properties.contains_key(prop) || !mapped(tag) {
                return Err(ModelError::UnboundTag(format!("{prop}->{tag}")));
            }
        }
        let properties = t
            .properties
            .values()
            .map(|p| {
                let value = t
                    .defaults
                    .get(&p.name)
                    .cloned()
                    .unwrap_or_else(|| TagValue::default_for(p.ty));
                (
                    p.name.clone(),
                    PropertyValue {
                        value,
                        quality: Quality::Good,
                        source_ms: None,
                        tick: None,
                        initialized: false,
                    },
                )
            })
            .collect();
        for (prop, tag) in &bindings {
            self.by_tag
                .entry(tag.clone())
                .or_default()
                .push((thing_id.to_string(), prop.clone()));
        }
        self.things.insert(
            thing_id.to_string(),
            Thing {
                thing_id: thing_id.to_string(),
                template: template.to_string(),
                properties,
                bindings,
                events: VecDeque::new(),
                event_capacity: self.event_capacity,
                events_dropped: 0,
            },
        );
        Ok(&self.things[thing_id])
    }

    pub fn thing(&self, id: &str) -> Option<&Thing> {
        self.things.get(id)
    }

    pub fn things(&self) -> impl Iterator<Item = &Thing> {
        self.things.values()
    }

    pub fn is_bound_tag(&self, tag: &str) -> bool {
        self.by_tag.contains_key(tag)
    }

    pub fn bound_tags(&self) -> impl Iterator<Item = &str> {
        self.by_tag.keys().map(String::as_str)
    }

    /// `(thing, property)` pairs fed by a tag.
    pub fn bound_to(&self, tag: &str) -> &[(String, String)] {
        self.by_tag.get(tag).map_or(&[], Vec::as_slice)
    }

    /// A user write. Bound properties only ever change through telemetry.
    pub fn write_property(&mut self, thing_id: &str, property: &str, value: TagValue) -> Result<(), ModelError> {
        let thing = self
            .things
            .get_mut(thing_id)
            .ok_or_else(|| ModelError::UnknownThing(thing_id.into()))?;
        let decl = &self.templates[&thing.template].properties;
        let d = decl
            .get(property)
            .ok_or_else(|| ModelError::UnknownProperty(property.into()))?;
        if !d.writable || thing.is_bound(property) {
            return Err(ModelError::NotWritable(property.into()));
        }
        if d.ty != value.tag_type() {
            return Err(ModelError::TypeMismatch(property.into()));
        }
        let p = thing.properties.get_mut(property).expect("declared");
        p.value = value;
        p.initialized = true;
        Ok(())
    }

    /// Applies one telemetry value to every property bound to `tag`. The
    /// first value a property receives initialises it silently; after that
    /// each change of a boolean fires the events triggered by that edge.
    /// Returns `None` if no thing is bound to the tag.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &mut self,
        tag: &str,
        value: &TagValue,
        quality: Quality,
        source_ms: Option<u64>,
        tick: Option<u64>,
        now_ms: u64,
        seq: &mut u64,
    ) -> Option<Vec<ThingEvent>> {
        let r = self.apply_batch(&[(tag, value, quality)], source_ms, tick, now_ms, seq);
        (r.unknown == 0).then_some(r.events)
    }

    /// Applies several updates as one: every value lands before any event
    /// payload is read, so an event sees the whole batch.
    pub fn apply_batch(
        &mut self,
        updates: &[(&str, &TagValue, Quality)],
        source_ms: Option<u64>,
        tick: Option<u64>,
        now_ms: u64,
        seq: &mut u64,
    ) -> BatchResult {
        let mut result = BatchResult::default();
        let mut pending: Vec<(String, EventDecl)> = Vec::new();
        for (tag, value, quality) in updates {
            let Some(targets) = self.by_tag.get(*tag).cloned() else {
                result.unknown += 1;
                continue;
            };
            result.updated += 1;
            for (thing_id, prop) in targets {
                let thing = self.things.get_mut(&thing_id).expect("bound things exist");
                let tpl = &self.templates[&thing.template];
                let p = thing.properties.get_mut(&prop).expect("bound properties exist");
                if p.value.tag_type() != value.tag_type() {
                    continue;
                }
                let edge = match (p.initialized, &p.value, value) {
                    (true, TagValue::Bool(false), TagValue::Bool(true)) => Some(Edge::Rising),
                    (true, TagValue::Bool(true), TagValue::Bool(false)) => Some(Edge::Falling),
                    _ => None,
                };
                p.value = (*value).clone();
                p.quality = *quality;
                p.source_ms = source_ms;
                p.tick = tick;
                p.initialized = true;
                let Some(edge) = edge else { continue };
                pending.extend(
                    tpl.events
                        .iter()
                        .filter(|e| e.trigger.as_ref().is_some_and(|t| t.property == prop && t.edge == edge))
                        .map(|e| (thing_id.clone(), e.clone())),
                );
            }
        }
        for (thing_id, e) in pending {
            let thing = self.things.get_mut(&thing_id).expect("bound things exist");
            *seq += 1;
            let data = e
                .fields
                .iter()
                .map(|f| (f.clone(), display_value(&thing.properties[f].value)))
                .collect();
            let ev = ThingEvent {
                seq: *seq,
                thing_id,
                event: e.name,
                ms: now_ms,
                tick,
                data,
            };
            thing.log(ev.clone());
            result.events.push(ev);
        }
        result
    }

    /// Marks every bound property stale, e.g. after the link goes quiet.
    pub fn mark_stale(&mut self) {
        for t in self.things.values_mut() {
            for prop in t.bindings.keys() {
                if let Some(p) = t.properties.get_mut(prop) {
                    p.quality = Quality::Stale;
                }
            }
        }
    }
}

/// What one [`ThingModel::apply_batch`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchResult {
    /// Updates for tags no Thing binds.
    pub unknown: usize,
    pub updated: usize,
    pub events: Vec<ThingEvent>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sensor_shape() -> ThingShape {
        ThingShape::new("Sensor")
            .property("Present", TagType::Bool, false)
            .event("Arrived", Some(("Present", Edge::Rising)), &["Present"])
    }

    fn model() -> ThingModel {
        let mut m = ThingModel::new(3);
        m.register_shape(sensor_shape()).unwrap();
        m.register_template(ThingTemplate {
            name: "Dock".into(),
            shapes: vec!["Sensor".into()],
            own: ThingShape::new("Dock").property("Note", TagType::Str, true),
            defaults: BTreeMap::new(),
        })
        .unwrap();
        m
    }

    fn bind(p: &str, t: &str) -> BTreeMap<String, String> {
        [(p.to_string(), t.to_string())].into_iter().collect()
    }

    #[test]
    fn duplicate_declarations_in_a_shape() {
        let s = ThingShape::new("X")
            .property("A", TagType::Bool, false)
            .event("A", None, &[]);
        assert_eq!(s.validate(), Err(ModelError::DuplicateDeclaration("A".into())));
    }

    #[test]
    fn colliding_shapes_are_rejected() {
        let mut m = model();
        m.register_shape(ThingShape::new("Other").property("Present", TagType::Bool, false))
            .unwrap();
        let err = m
            .register_template(ThingTemplate {
                name: "Bad".into(),
                shapes: vec!["Sensor".into(), "Other".into()],
                ..ThingTemplate::default()
            })
            .unwrap_err();
        assert_eq!(err, ModelError::DuplicateProperty("Present".into()));
        assert!(m.template("Bad").is_none());
    }

    #[test]
    fn instances_share_declarations_not_values() {
        let mut m = model();
        m.instantiate("Dock", "d1", bind("Present", "DT/A"), |_| true).unwrap();
        m.instantiate("Dock", "d2", bind("Present", "DT/B"), |_| true).unwrap();
        let mut seq = 0;
        m.apply("DT/A", &TagValue::Bool(true), Quality::Good, None, None, 0, &mut seq);
        assert_eq!(m.thing("d1").unwrap().value("Present"), Some(&TagValue::Bool(true)));
        assert_eq!(m.thing("d2").unwrap().value("Present"), Some(&TagValue::Bool(false)));
        assert_eq!(
            m.thing("d1").unwrap().properties.keys().collect::<Vec<_>>(),
            m.thing("d2").unwrap().properties.keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn instantiate_guards() {
        let mut m = model();
        assert!(matches!(
            m.instantiate("Nope", "x", BTreeMap::new(), |_| true),
            Err(ModelError::UnknownTemplate(_))
        ));
        assert!(matches!(
            m.instantiate("Dock", "x", bind("Present", "DT/NOPE"), |t| t != "DT/NOPE"),
            Err(ModelError::UnboundTag(_))
        ));
        m.instantiate("Dock", "x", BTreeMap::new(), |_| true).unwrap();
        assert!(matches!(
            m.instantiate("Dock", "x", BTreeMap::new(), |_| true),
            Err(ModelError::DuplicateThingId(_))
        ));
    }

    #[test]
    fn edges_fire_once_and_the_log_is_bounded() {
        let mut m = model();
        m.instantiate("Dock", "d", bind("Present", "DT/A"), |_| true).unwrap();
        let mut seq = 0;
        let mut fire = |v: bool| {
            m.apply("DT/A", &TagValue::Bool(v), Quality::Good, None, None, 0, &mut seq)
                .unwrap()
                .len()
        };
        assert_eq!(fire(true), 0, "first value initialises");
        assert_eq!(fire(true), 0);
        assert_eq!(fire(false), 0, "no falling trigger declared");
        let n: usize = (0..5).map(|_| fire(true) + fire(false)).sum();
        assert_eq!(n, 5);
        let t = m.thing("d").unwrap();
        assert_eq!(t.events.len(), 3);
        assert_eq!(t.events_dropped, 2);
    }

    #[test]
    fn bound_properties_reject_user_writes() {
        let mut m = model();
        m.instantiate("Dock", "d", bind("Present", "DT/A"), |_| true).unwrap();
        assert_eq!(
            m.write_property("d", "Present", TagValue::Bool(true)),
            Err(ModelError::NotWritable("Present".into()))
        );
        m.write_property("d", "Note", TagValue::Str("hi".into())).unwrap();
        assert_eq!(
            m.write_property("d", "Note", TagValue::Int(1)),
            Err(ModelError::TypeMismatch("Note".into()))
        );
    }
}
